//! File formats: nodal field CSV, per-step trajectory CSV, legacy VTK point
//! data, and the JSON run manifest.
//!
//! Floating-point values are written with 17 significant digits, which
//! round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::mesh::Mesh;
use crate::stepper::Trajectory;
use crate::vec3::Vec3;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("serializing {what}: {message}")]
    Serialize { what: &'static str, message: String },
}

pub const FIELD_HEADER: &str = "node,mx,my,mz";
pub const TRAJECTORY_HEADER: &str = "step,t,energy,norm_v_sq,norm_v_minus_A_sq,norm_grad_v_sq,residual";

/// 17 significant digits in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_text(path: &Path, contents: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| IoError::Fs { path: parent.to_path_buf(), source })?;
        }
    }
    fs::write(path, contents).map_err(|source| IoError::Fs { path: path.to_path_buf(), source })
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Fs { path: path.to_path_buf(), source })
}

pub fn field_csv(values: &[Vec3]) -> String {
    let mut out = String::with_capacity(64 * values.len() + 16);
    out.push_str(FIELD_HEADER);
    out.push('\n');
    for (j, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{j},{},{},{}", fmt_f64(v[0]), fmt_f64(v[1]), fmt_f64(v[2]));
    }
    out
}

pub fn write_field_csv(path: &Path, values: &[Vec3]) -> Result<(), IoError> {
    write_text(path, &field_csv(values))
}

pub fn read_field_csv(path: &Path) -> Result<Vec<Vec3>, IoError> {
    let text = read_text(path)?;
    let parse_err = |line: usize, message: String| IoError::Parse { path: path.to_path_buf(), line, message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == FIELD_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header `{FIELD_HEADER}`"))),
    }
    let mut values = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(parse_err(idx + 1, format!("expected 4 columns, got {}", parts.len())));
        }
        let node: usize = parts[0].parse().map_err(|e| parse_err(idx + 1, format!("node index: {e}")))?;
        if node != values.len() {
            return Err(parse_err(idx + 1, format!("expected node {}, got {node}", values.len())));
        }
        let mut v = [0.0; 3];
        for (c, part) in parts[1..].iter().enumerate() {
            v[c] = part.parse().map_err(|e| parse_err(idx + 1, format!("component {c}: {e}")))?;
        }
        values.push(v);
    }
    Ok(values)
}

pub fn trajectory_csv(trajectory: &Trajectory) -> String {
    let mut out = String::with_capacity(160 * (trajectory.steps.len() + 2));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    let zero = fmt_f64(0.0);
    let _ = writeln!(out, "0,{zero},{},{zero},{zero},{zero},{zero}", fmt_f64(trajectory.initial_energy));
    for d in &trajectory.steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            d.step,
            fmt_f64(d.time),
            fmt_f64(d.energy),
            fmt_f64(d.norm_v_sq),
            fmt_f64(d.norm_v_minus_a_sq),
            fmt_f64(d.norm_grad_v_sq),
            fmt_f64(d.residual)
        );
    }
    out
}

/// Legacy ASCII VTK unstructured grid with `m` and `X` point vectors.
pub fn vtk_snapshot(mesh: &Mesh, m: &[Vec3], martingale: &[Vec3], time: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0");
    let _ = writeln!(out, "magnetization t={}", fmt_f64(time));
    let _ = writeln!(out, "ASCII");
    let _ = writeln!(out, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(out, "POINTS {} double", mesh.node_count());
    for j in 0..mesh.node_count() {
        let p = mesh.point(j);
        let y = p.get(1).copied().unwrap_or(0.0);
        let _ = writeln!(out, "{} {} 0", fmt_f64(p[0]), fmt_f64(y));
    }
    let elements = mesh.elements();
    let size: usize = elements.iter().map(|e| e.len() + 1).sum();
    let _ = writeln!(out, "CELLS {} {size}", elements.len());
    for e in elements {
        let ids: Vec<String> = e.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{} {}", e.len(), ids.join(" "));
    }
    let _ = writeln!(out, "CELL_TYPES {}", elements.len());
    for e in elements {
        // VTK_LINE = 3, VTK_TRIANGLE = 5
        let _ = writeln!(out, "{}", if e.len() == 2 { 3 } else { 5 });
    }
    let _ = writeln!(out, "POINT_DATA {}", mesh.node_count());
    for (name, values) in [("m", m), ("X", martingale)] {
        let _ = writeln!(out, "VECTORS {name} double");
        for v in values {
            let _ = writeln!(out, "{} {} {}", fmt_f64(v[0]), fmt_f64(v[1]), fmt_f64(v[2]));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub artifact: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: String,
    /// True when the command stopped before writing every output.
    pub partial: bool,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Self {
            artifact: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_hash,
            seed,
            status: "ok".into(),
            partial: false,
            files: Vec::new(),
        }
    }
}

pub fn to_json<T: Serialize>(value: &T, what: &'static str) -> Result<String, IoError> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| IoError::Serialize { what, message: e.to_string() })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, what: &'static str) -> Result<(), IoError> {
    write_text(path, &to_json(value, what)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, MeshSpec};
    use proptest::prelude::*;

    #[test]
    fn rejects_malformed_field_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        write_text(&path, "node,mx,my,mz\n0,1,0\n").unwrap();
        assert!(matches!(read_field_csv(&path), Err(IoError::Parse { line: 2, .. })));
        write_text(&path, "x,y\n").unwrap();
        assert!(matches!(read_field_csv(&path), Err(IoError::Parse { line: 1, .. })));
        assert!(matches!(read_field_csv(&dir.path().join("missing.csv")), Err(IoError::Fs { .. })));
    }

    #[test]
    fn vtk_lists_all_points_and_cells() {
        let mesh = build_mesh(&MeshSpec::rectangle(1.0, 1.0, 3, 2)).unwrap();
        let m = vec![[0.0, 0.0, 1.0]; 6];
        let text = vtk_snapshot(&mesh, &m, &m, 0.5);
        assert!(text.contains("POINTS 6 double"));
        assert!(text.contains("CELLS 4 16"));
        assert!(text.contains("VECTORS X double"));
    }

    proptest! {
        #[test]
        fn field_csv_round_trips_bitwise(values in prop::collection::vec(prop::array::uniform3(-1e3f64..1e3), 1..20)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("field.csv");
            write_field_csv(&path, &values).unwrap();
            let back = read_field_csv(&path).unwrap();
            prop_assert_eq!(back.len(), values.len());
            for (a, b) in back.iter().zip(&values) {
                for c in 0..3 {
                    prop_assert_eq!(a[c].to_bits(), b[c].to_bits());
                }
            }
        }
    }
}
