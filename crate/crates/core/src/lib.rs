//! Linearly implicit tangent-plane θ-scheme for the stochastic
//! Landau–Lifshitz–Gilbert equation with exchange energy and spectral
//! Q-Wiener noise, discretized with lumped P1 finite elements.
//!
//! Each step solves one linear system for a tangential increment `v ⊥ m`
//! and renormalizes `m ← (m + v)/|m + v|` nodewise. [`experiments`]
//! provides the Monte Carlo diagnostics built on top.

pub mod config;
pub mod experiments;
pub mod field;
pub mod frames;
pub mod initial;
pub mod io;
pub mod mesh;
pub mod noise;
pub mod rng;
pub mod solver;
pub mod sparse;
pub mod stepper;
pub mod tangent;
pub mod vec3;

use thiserror::Error;

pub use config::{parse_config, ConfigErrors, RunConfig};
pub use field::MagnetizationField;
pub use initial::InitialCondition;
pub use mesh::{build_mesh, Mesh, MeshSpec};
pub use noise::{build_noise, NoiseModel, NoiseSpec, WienerIncrement};
pub use stepper::{Scheme, SchemeParams, StepDiagnostics, Trajectory};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Mesh(#[from] mesh::MeshError),
    #[error(transparent)]
    Noise(#[from] noise::NoiseError),
    #[error(transparent)]
    Init(#[from] initial::InitError),
    #[error(transparent)]
    Solver(#[from] solver::SolverError),
    #[error(transparent)]
    Path(#[from] stepper::PathError),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// True for problems with the inputs rather than failures while running.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Invalid(_))
    }
}

/// Everything built once from a [`RunConfig`] and shared read-only by all
/// paths.
#[derive(Debug)]
pub struct Simulation {
    pub config: RunConfig,
    pub mesh: Mesh,
    pub noise: NoiseModel,
    pub initial: MagnetizationField,
    solver: Box<dyn solver::LinearSolver>,
}

impl Simulation {
    pub fn new(config: &RunConfig) -> Result<Self, Error> {
        let issues = config.validate();
        if !issues.is_empty() {
            return Err(ConfigErrors(issues).into());
        }
        let mesh = build_mesh(&config.mesh)?;
        let noise = build_noise(&mesh, &config.noise)?;
        let initial = initial::init_state(&config.initial, &mesh, &initial::ProfileRegistry::default())?;
        let solver = solver::create_solver(&config.solver)?;
        Ok(Self { config: config.clone(), mesh, noise, initial, solver })
    }

    /// Same mesh, noise and initial state with a different step count.
    pub fn with_steps(&self, steps: usize) -> Result<Self, Error> {
        let mut config = self.config.clone();
        config.scheme.steps = steps;
        let solver = solver::create_solver(&config.solver)?;
        Ok(Self { config, mesh: self.mesh.clone(), noise: self.noise.clone(), initial: self.initial.clone(), solver })
    }

    pub fn params(&self) -> SchemeParams {
        self.config.scheme
    }

    pub fn scheme(&self) -> Scheme<'_> {
        Scheme { mesh: &self.mesh, noise: &self.noise, params: self.config.scheme, solver: self.solver.as_ref() }
    }

    pub fn solver(&self) -> &dyn solver::LinearSolver {
        self.solver.as_ref()
    }

    /// One path driven by `ChaCha8Rng::seed_from_u64(seed)`.
    pub fn run_path(&self, seed: u64) -> Result<Trajectory, stepper::PathError> {
        let mut rng = rng::path_rng(seed, 0);
        self.scheme().run_path(&self.initial, &mut rng, self.config.output.snapshot_stride)
    }
}

/// Builds a [`Simulation`] and runs a single path.
pub fn run_path(config: &RunConfig, seed: u64) -> Result<Trajectory, Error> {
    Ok(Simulation::new(config)?.run_path(seed)?)
}
