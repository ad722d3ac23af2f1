//! Run configuration in TOML.
//!
//! ```toml
//! [mesh]
//! dimension = 1            # 1 or 2
//! extents = [1.0]          # domain lengths per axis
//! nodes = [65]             # nodes per axis, at least 2
//!
//! [scheme]
//! final_time = 0.1
//! steps = 256
//! theta = 1.0              # 1/2 < theta <= 1
//!
//! [noise]
//! modes = 8                # truncation J; 0 = deterministic
//! decay = 2.0              # s in g = c (1 + λ)^(-s)
//! amplitude = 0.5          # c
//!
//! [initial]
//! kind = "profile"         # constant | profile | file
//! name = "rotation"        # profile name (kind = "profile")
//! # vector = [0, 0, 1]     # kind = "constant"
//! # path = "m0.csv"        # kind = "file"
//!
//! [solver]
//! method = "auto"          # auto | direct | iterative
//! tol = 1e-10
//! max_iter = 0             # 0 = 10 x unknowns
//!
//! [mc]
//! paths = 100
//! base_seed = 0
//!
//! [output]
//! dir = "out"
//! snapshot_stride = 0      # 0 = no snapshots
//! vtk = false
//! ```
//!
//! Every key is optional and defaults to the value shown. Unknown sections
//! and keys are rejected, and all violations are reported together.

use std::fmt;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::initial::{InitialCondition, ProfileRegistry};
use crate::mesh::MeshSpec;
use crate::noise::NoiseSpec;
use crate::solver::{SolverRegistry, SolverSettings};
use crate::stepper::SchemeParams;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSpec {
    pub paths: usize,
    pub base_seed: u64,
}

impl Default for MonteCarloSpec {
    fn default() -> Self {
        Self { paths: 100, base_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub snapshot_stride: usize,
    pub vtk: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), snapshot_stride: 0, vtk: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mesh: MeshSpec,
    pub scheme: SchemeParams,
    pub noise: NoiseSpec,
    pub initial: InitialCondition,
    pub solver: SolverSettings,
    pub mc: MonteCarloSpec,
    pub output: OutputSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mesh: MeshSpec::interval(1.0, 65),
            scheme: SchemeParams::default(),
            noise: NoiseSpec::default(),
            initial: InitialCondition::default(),
            solver: SolverSettings::default(),
            mc: MonteCarloSpec::default(),
            output: OutputSpec::default(),
        }
    }
}

/// One problem with a configuration, located by its dotted key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem{}):", self.0.len(), if self.0.len() == 1 { "" } else { "s" })?;
        for issue in &self.0 {
            writeln!(f, "  {issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

const SECTIONS: &[(&str, &[&str])] = &[
    ("mesh", &["dimension", "extents", "nodes"]),
    ("scheme", &["final_time", "steps", "theta"]),
    ("noise", &["modes", "decay", "amplitude"]),
    ("initial", &["kind", "vector", "name", "path"]),
    ("solver", &["method", "tol", "max_iter"]),
    ("mc", &["paths", "base_seed"]),
    ("output", &["dir", "snapshot_stride", "vtk"]),
];

struct Reader<'a> {
    root: &'a Table,
    issues: Vec<ConfigIssue>,
}

impl<'a> Reader<'a> {
    fn issue(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ConfigIssue { path: path.into(), message: message.into() });
    }

    fn check_keys(&mut self) {
        let root = self.root;
        for (section, value) in root {
            let Some((_, keys)) = SECTIONS.iter().find(|(name, _)| name == section) else {
                self.issue(section.clone(), "unknown section");
                continue;
            };
            match value.as_table() {
                Some(table) => {
                    for key in table.keys() {
                        if !keys.contains(&key.as_str()) {
                            self.issue(format!("{section}.{key}"), "unknown key");
                        }
                    }
                }
                None => self.issue(section.clone(), "expected a table"),
            }
        }
    }

    fn raw(&self, section: &str, key: &str) -> Option<&'a Value> {
        self.root.get(section)?.as_table()?.get(key)
    }

    fn get<T>(&mut self, section: &str, key: &str, default: T, convert: impl Fn(&Value) -> Result<T, String>) -> T {
        match self.raw(section, key) {
            None => default,
            Some(v) => match convert(v) {
                Ok(x) => x,
                Err(msg) => {
                    self.issue(format!("{section}.{key}"), msg);
                    default
                }
            },
        }
    }
}

fn as_f64(v: &Value) -> Result<f64, String> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        other => Err(format!("expected a number, got {}", other.type_str())),
    }
}

fn as_usize(v: &Value) -> Result<usize, String> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        Value::Integer(i) => Err(format!("expected a nonnegative integer, got {i}")),
        other => Err(format!("expected an integer, got {}", other.type_str())),
    }
}

fn as_u64(v: &Value) -> Result<u64, String> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        Value::String(s) => s.parse().map_err(|e| format!("expected an unsigned 64-bit integer: {e}")),
        other => Err(format!("expected a nonnegative integer, got {other}")),
    }
}

fn as_bool(v: &Value) -> Result<bool, String> {
    v.as_bool().ok_or_else(|| format!("expected a boolean, got {}", v.type_str()))
}

fn as_string(v: &Value) -> Result<String, String> {
    v.as_str().map(str::to_string).ok_or_else(|| format!("expected a string, got {}", v.type_str()))
}

fn as_array<T>(v: &Value, item: fn(&Value) -> Result<T, String>) -> Result<Vec<T>, String> {
    let array = v.as_array().ok_or_else(|| format!("expected an array, got {}", v.type_str()))?;
    array.iter().enumerate().map(|(i, x)| item(x).map_err(|e| format!("element {i}: {e}"))).collect()
}

/// Parses and validates; all problems are collected.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| {
        ConfigErrors(vec![ConfigIssue { path: "<document>".into(), message: e.message().to_string() }])
    })?;
    let mut r = Reader { root: &root, issues: Vec::new() };
    r.check_keys();
    let d = RunConfig::default();

    let mesh = MeshSpec {
        dimension: r.get("mesh", "dimension", d.mesh.dimension, as_usize),
        extents: r.get("mesh", "extents", d.mesh.extents.clone(), |v| as_array(v, as_f64)),
        nodes: r.get("mesh", "nodes", d.mesh.nodes.clone(), |v| as_array(v, as_usize)),
    };
    let scheme = SchemeParams {
        final_time: r.get("scheme", "final_time", d.scheme.final_time, as_f64),
        steps: r.get("scheme", "steps", d.scheme.steps, as_usize),
        theta: r.get("scheme", "theta", d.scheme.theta, as_f64),
    };
    let noise = NoiseSpec {
        modes: r.get("noise", "modes", d.noise.modes, as_usize),
        decay: r.get("noise", "decay", d.noise.decay, as_f64),
        amplitude: r.get("noise", "amplitude", d.noise.amplitude, as_f64),
    };
    let kind = r.get("initial", "kind", "profile".to_string(), as_string);
    let initial = match kind.as_str() {
        "constant" => InitialCondition::Constant {
            vector: r.get("initial", "vector", [0.0, 0.0, 1.0], |v| {
                let xs = as_array(v, as_f64)?;
                <[f64; 3]>::try_from(xs).map_err(|xs| format!("expected 3 components, got {}", xs.len()))
            }),
        },
        "profile" => InitialCondition::Profile { name: r.get("initial", "name", "rotation".to_string(), as_string) },
        "file" => match r.get("initial", "path", None, |v| as_string(v).map(Some)) {
            Some(path) => InitialCondition::File { path: PathBuf::from(path) },
            None => {
                r.issue("initial.path", "required when initial.kind = \"file\"");
                InitialCondition::default()
            }
        },
        other => {
            r.issue("initial.kind", format!("expected one of constant, profile, file; got `{other}`"));
            InitialCondition::default()
        }
    };
    let solver = SolverSettings {
        method: r.get("solver", "method", d.solver.method.clone(), as_string),
        tol: r.get("solver", "tol", d.solver.tol, as_f64),
        max_iter: r.get("solver", "max_iter", d.solver.max_iter, as_usize),
    };
    let mc = MonteCarloSpec {
        paths: r.get("mc", "paths", d.mc.paths, as_usize),
        base_seed: r.get("mc", "base_seed", d.mc.base_seed, as_u64),
    };
    let output = OutputSpec {
        dir: r.get("output", "dir", d.output.dir.clone(), |v| as_string(v).map(PathBuf::from)),
        snapshot_stride: r.get("output", "snapshot_stride", d.output.snapshot_stride, as_usize),
        vtk: r.get("output", "vtk", d.output.vtk, as_bool),
    };
    let config = RunConfig { mesh, scheme, noise, initial, solver, mc, output };
    let mut issues = r.issues;
    issues.extend(config.validate());
    if issues.is_empty() {
        Ok(config)
    } else {
        Err(ConfigErrors(issues))
    }
}

impl RunConfig {
    /// Range checks that do not depend on how the config was produced.
    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut push = |path: &str, message: String| issues.push(ConfigIssue { path: path.into(), message });
        for err in self.mesh.validate() {
            push("mesh", err.to_string());
        }
        let s = &self.scheme;
        if !(s.theta > 0.5 && s.theta <= 1.0) {
            push("scheme.theta", format!("θ = {} must lie in the half-open interval (1/2, 1]: 1/2 < θ ≤ 1", s.theta));
        }
        if !(s.final_time > 0.0 && s.final_time.is_finite()) {
            push("scheme.final_time", format!("must be positive and finite, got {}", s.final_time));
        }
        if s.steps == 0 {
            push("scheme.steps", "must be at least 1".into());
        }
        for err in self.noise.validate() {
            let path = match err {
                crate::noise::NoiseError::Decay(_) => "noise.decay",
                _ => "noise.amplitude",
            };
            push(path, err.to_string());
        }
        if self.mesh.validate().is_empty() {
            let available = 3 * self.mesh.node_count();
            if self.noise.modes > available {
                push(
                    "noise.modes",
                    format!("{} modes exceed the {available} distinct modes resolved by the mesh", self.noise.modes),
                );
            }
        }
        match &self.initial {
            InitialCondition::Constant { vector } => {
                if !(vector.iter().all(|x| x.is_finite()) && vector.iter().any(|&x| x != 0.0)) {
                    push("initial.vector", "must be a finite nonzero vector".into());
                }
            }
            InitialCondition::Profile { name } => {
                let profiles = ProfileRegistry::default();
                if profiles.get(name).is_none() {
                    push("initial.name", format!("unknown profile `{name}` (known: {})", profiles.names().join(", ")));
                }
            }
            InitialCondition::File { path } => {
                if path.as_os_str().is_empty() {
                    push("initial.path", "must not be empty".into());
                }
            }
        }
        let solvers = SolverRegistry::default();
        if !solvers.contains(&self.solver.method) {
            push(
                "solver.method",
                format!("unknown method `{}` (known: {})", self.solver.method, solvers.names().join(", ")),
            );
        }
        if !(self.solver.tol > 0.0 && self.solver.tol.is_finite()) {
            push("solver.tol", format!("must be positive and finite, got {}", self.solver.tol));
        }
        if self.mc.paths == 0 {
            push("mc.paths", "must be at least 1".into());
        }
        issues
    }

    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        let section = |pairs: Vec<(&str, Value)>| {
            Value::Table(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect::<Table>())
        };
        let floats = |xs: &[f64]| Value::Array(xs.iter().map(|&x| Value::Float(x)).collect());
        root.insert(
            "mesh".into(),
            section(vec![
                ("dimension", Value::Integer(self.mesh.dimension as i64)),
                ("extents", floats(&self.mesh.extents)),
                ("nodes", Value::Array(self.mesh.nodes.iter().map(|&n| Value::Integer(n as i64)).collect())),
            ]),
        );
        root.insert(
            "scheme".into(),
            section(vec![
                ("final_time", Value::Float(self.scheme.final_time)),
                ("steps", Value::Integer(self.scheme.steps as i64)),
                ("theta", Value::Float(self.scheme.theta)),
            ]),
        );
        root.insert(
            "noise".into(),
            section(vec![
                ("modes", Value::Integer(self.noise.modes as i64)),
                ("decay", Value::Float(self.noise.decay)),
                ("amplitude", Value::Float(self.noise.amplitude)),
            ]),
        );
        let initial = match &self.initial {
            InitialCondition::Constant { vector } => {
                vec![("kind", Value::String("constant".into())), ("vector", floats(vector))]
            }
            InitialCondition::Profile { name } => {
                vec![("kind", Value::String("profile".into())), ("name", Value::String(name.clone()))]
            }
            InitialCondition::File { path } => vec![
                ("kind", Value::String("file".into())),
                ("path", Value::String(path.to_string_lossy().into_owned())),
            ],
        };
        root.insert("initial".into(), section(initial));
        root.insert(
            "solver".into(),
            section(vec![
                ("method", Value::String(self.solver.method.clone())),
                ("tol", Value::Float(self.solver.tol)),
                ("max_iter", Value::Integer(self.solver.max_iter as i64)),
            ]),
        );
        let seed = match i64::try_from(self.mc.base_seed) {
            Ok(s) => Value::Integer(s),
            Err(_) => Value::String(self.mc.base_seed.to_string()),
        };
        root.insert("mc".into(), section(vec![("paths", Value::Integer(self.mc.paths as i64)), ("base_seed", seed)]));
        root.insert(
            "output".into(),
            section(vec![
                ("dir", Value::String(self.output.dir.to_string_lossy().into_owned())),
                ("snapshot_stride", Value::Integer(self.output.snapshot_stride as i64)),
                ("vtk", Value::Boolean(self.output.vtk)),
            ]),
        );
        toml::to_string(&root).expect("a table of plain values always serializes")
    }

    /// SHA-256 of the canonical serialization, excluding the `output` section.
    pub fn semantic_hash(&self) -> String {
        let canonical = RunConfig { output: OutputSpec::default(), ..self.clone() }.to_toml();
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
