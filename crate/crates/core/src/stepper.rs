//! The time-stepping loop: draw an increment, solve for the tangential
//! update, renormalize nodewise, record diagnostics.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::MagnetizationField;
use crate::mesh::Mesh;
use crate::noise::{NoiseError, NoiseModel, WienerIncrement};
use crate::solver::LinearSolver;
use crate::tangent::{self, assemble_and_solve, step_residual_identity, TangentError, TangentUpdate};
use crate::vec3::{add, norm, norm_sq, sub, Vec3, ZERO};

/// Smallest admissible `|m_j + v_j|` before renormalization.
pub const RENORMALIZATION_GUARD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Tangent(#[from] TangentError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("node {node}: |m + v| = {magnitude} is below the renormalization guard {RENORMALIZATION_GUARD}")]
    Renormalization { node: usize, magnitude: f64 },
}

#[derive(Debug, Error)]
#[error("path failed at step {step}: {source}")]
pub struct PathError {
    pub step: usize,
    #[source]
    pub source: StepError,
}

#[derive(Debug, Error, PartialEq)]
pub enum SchemeError {
    #[error("θ = {0} is outside the admissible interval (1/2, 1]")]
    Theta(f64),
    #[error("final time must be positive and finite, got {0}")]
    FinalTime(f64),
    #[error("step count must be at least 1")]
    Steps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub final_time: f64,
    pub steps: usize,
    pub theta: f64,
}

impl Default for SchemeParams {
    fn default() -> Self {
        Self { final_time: 0.1, steps: 256, theta: 1.0 }
    }
}

impl SchemeParams {
    pub fn new(final_time: f64, steps: usize, theta: f64) -> Result<Self, SchemeError> {
        let params = Self { final_time, steps, theta };
        match params.validate().into_iter().next() {
            Some(err) => Err(err),
            None => Ok(params),
        }
    }

    pub fn validate(&self) -> Vec<SchemeError> {
        let mut errors = Vec::new();
        if tangent::check_theta(self.theta).is_err() {
            errors.push(SchemeError::Theta(self.theta));
        }
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            errors.push(SchemeError::FinalTime(self.final_time));
        }
        if self.steps == 0 {
            errors.push(SchemeError::Steps);
        }
        errors
    }

    pub fn dt(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    /// Same horizon and θ with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self { steps: self.steps * factor, ..*self }
    }
}

/// Scalars recorded for the update `m^n → m^{n+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    /// Index `n + 1` of the new state.
    pub step: usize,
    pub time: f64,
    /// `‖∇m^{n+1}‖²`
    pub energy: f64,
    /// `‖∇(m^n + v^n)‖²`
    pub energy_pre_normalization: f64,
    pub norm_v_sq: f64,
    pub norm_v_minus_a_sq: f64,
    pub norm_grad_v_sq: f64,
    pub norm_a_sq: f64,
    pub residual: f64,
    pub residual_scale: f64,
    /// `max_j |v_j·m_j|`
    pub tangency_defect: f64,
    /// `max_j ||m^{n+1}_j| − 1|`
    pub sphere_defect: f64,
    /// `max_j (|m^{n+1}_j − m_j − v_j| − ½|v_j|²)`, nonpositive when the
    /// projection increment bound holds.
    pub projection_excess: f64,
    pub solver_iterations: usize,
    pub solver_residual: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: MagnetizationField,
    pub update: TangentUpdate,
    /// `A = m × GΔW`
    pub noise_term: Vec<Vec3>,
    pub diagnostics: StepDiagnostics,
}

/// Everything a single step needs besides the state and the increment.
#[derive(Debug)]
pub struct Scheme<'a> {
    pub mesh: &'a Mesh,
    pub noise: &'a NoiseModel,
    pub params: SchemeParams,
    pub solver: &'a dyn LinearSolver,
}

/// Nodewise `(m + v) / |m + v|`.
pub fn renormalize(m: &MagnetizationField, v: &[Vec3]) -> Result<MagnetizationField, StepError> {
    let mut out = Vec::with_capacity(m.len());
    for (node, (&mj, &vj)) in m.as_slice().iter().zip(v).enumerate() {
        if vj == ZERO {
            out.push(mj);
            continue;
        }
        let sum = add(mj, vj);
        let magnitude = norm(sum);
        if magnitude.is_nan() || magnitude < RENORMALIZATION_GUARD {
            return Err(StepError::Renormalization { node, magnitude });
        }
        out.push([sum[0] / magnitude, sum[1] / magnitude, sum[2] / magnitude]);
    }
    Ok(MagnetizationField::from_unit(out, f64::INFINITY).expect("infinite tolerance"))
}

impl Scheme<'_> {
    pub fn dt(&self) -> f64 {
        self.params.dt()
    }

    /// Advances `m^n` (with `n = increment.step`) by one step.
    pub fn step_with_increment(
        &self,
        m: &MagnetizationField,
        increment: &WienerIncrement,
    ) -> Result<StepOutcome, StepError> {
        let dt = self.dt();
        let theta = self.params.theta;
        let update = assemble_and_solve(m, increment, self.noise, self.mesh, theta, dt, self.solver)?;
        let identity = step_residual_identity(m, &update.v, increment, self.noise, self.mesh, theta, dt)?;
        let next = renormalize(m, &update.v)?;
        let noise_term = tangent::noise_term(m, increment);
        let pre: Vec<Vec3> = m.as_slice().iter().zip(&update.v).map(|(&a, &b)| add(a, b)).collect();
        let v_minus_a: Vec<Vec3> = update.v.iter().zip(&noise_term).map(|(&a, &b)| sub(a, b)).collect();
        let projection_excess = m
            .as_slice()
            .iter()
            .zip(&update.v)
            .zip(next.as_slice())
            .map(|((&mj, &vj), &nj)| norm(sub(sub(nj, mj), vj)) - 0.5 * norm_sq(vj))
            .fold(f64::NEG_INFINITY, f64::max);
        let diagnostics = StepDiagnostics {
            step: increment.step + 1,
            time: (increment.step + 1) as f64 * dt,
            energy: self.mesh.grad_norm_sq(next.as_slice()).max(0.0),
            energy_pre_normalization: self.mesh.grad_norm_sq(&pre).max(0.0),
            norm_v_sq: self.mesh.l2_norm_sq(&update.v),
            norm_v_minus_a_sq: self.mesh.l2_norm_sq(&v_minus_a),
            norm_grad_v_sq: self.mesh.grad_norm_sq(&update.v).max(0.0),
            norm_a_sq: self.mesh.l2_norm_sq(&noise_term),
            residual: identity.residual,
            residual_scale: identity.scale,
            tangency_defect: update.max_tangency_defect(m),
            sphere_defect: next.max_sphere_defect(),
            projection_excess,
            solver_iterations: update.iterations,
            solver_residual: update.relative_residual,
        };
        Ok(StepOutcome { state: next, update, noise_term, diagnostics })
    }

    /// Draws the increment for step `n` from `rng`, then advances.
    pub fn step<R: Rng + ?Sized>(
        &self,
        m: &MagnetizationField,
        rng: &mut R,
        n: usize,
    ) -> Result<StepOutcome, StepError> {
        let increment = self.noise.sample_increment(rng, self.dt(), n)?;
        self.step_with_increment(m, &increment)
    }

    /// Runs all steps. `source(n)` supplies the increment for step `n` and is
    /// called in order `0, 1, …`; `observe` sees each completed step.
    pub fn drive<S, O>(
        &self,
        m0: &MagnetizationField,
        mut source: S,
        mut observe: O,
    ) -> Result<MagnetizationField, PathError>
    where
        S: FnMut(usize) -> Result<WienerIncrement, NoiseError>,
        O: FnMut(&MagnetizationField, &WienerIncrement, &StepOutcome),
    {
        let mut m = m0.clone();
        for n in 0..self.params.steps {
            let increment = source(n).map_err(|e| PathError { step: n, source: e.into() })?;
            let outcome = self.step_with_increment(&m, &increment).map_err(|source| PathError { step: n, source })?;
            observe(&m, &increment, &outcome);
            m = outcome.state;
        }
        Ok(m)
    }

    /// One sample path with its own generator.
    pub fn run_path<R: Rng + ?Sized>(
        &self,
        m0: &MagnetizationField,
        rng: &mut R,
        snapshot_stride: usize,
    ) -> Result<Trajectory, PathError> {
        let dt = self.dt();
        let mut steps = Vec::with_capacity(self.params.steps);
        let mut martingale = vec![ZERO; m0.len()];
        let mut snapshots = Vec::new();
        if snapshot_stride > 0 {
            snapshots.push(Snapshot { step: 0, time: 0.0, m: m0.clone(), martingale: martingale.clone() });
        }
        let last = self.params.steps;
        let final_state = self.drive(
            m0,
            |n| self.noise.sample_increment(rng, dt, n),
            |_, _, outcome| {
                for (x, a) in martingale.iter_mut().zip(&outcome.noise_term) {
                    *x = add(*x, *a);
                }
                let d = outcome.diagnostics;
                steps.push(d);
                if snapshot_stride > 0 && (d.step % snapshot_stride == 0 || d.step == last) {
                    snapshots.push(Snapshot {
                        step: d.step,
                        time: d.time,
                        m: outcome.state.clone(),
                        martingale: martingale.clone(),
                    });
                }
            },
        )?;
        Ok(Trajectory {
            dt,
            initial_energy: self.mesh.grad_norm_sq(m0.as_slice()).max(0.0),
            steps,
            snapshots,
            martingale,
            final_state,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub m: MagnetizationField,
    /// `X_N(t) = Σ_{(n+1)Δt ≤ t} A^n`
    pub martingale: Vec<Vec3>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub initial_energy: f64,
    pub steps: Vec<StepDiagnostics>,
    pub snapshots: Vec<Snapshot>,
    /// Martingale part at the final time.
    pub martingale: Vec<Vec3>,
    pub final_state: MagnetizationField,
}

impl Trajectory {
    /// Energies `‖∇m^n‖²` for `n = 0..=N`.
    pub fn energies(&self) -> Vec<f64> {
        std::iter::once(self.initial_energy).chain(self.steps.iter().map(|d| d.energy)).collect()
    }

    pub fn sum_v_minus_a_sq(&self) -> f64 {
        self.steps.iter().map(|d| d.norm_v_minus_a_sq).sum()
    }

    pub fn sum_v_sq(&self) -> f64 {
        self.steps.iter().map(|d| d.norm_v_sq).sum()
    }

    pub fn sum_grad_v_sq(&self) -> f64 {
        self.steps.iter().map(|d| d.norm_grad_v_sq).sum()
    }

    pub fn max_sphere_defect(&self) -> f64 {
        self.steps.iter().map(|d| d.sphere_defect).fold(0.0, f64::max)
    }

    pub fn max_tangency_defect(&self) -> f64 {
        self.steps.iter().map(|d| d.tangency_defect).fold(0.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.steps.iter().map(|d| d.residual).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vec3::{dot, scale};

    #[test]
    fn zero_update_is_a_fixed_point() {
        let m = MagnetizationField::from_normalized(vec![[0.2, 0.3, 0.9], [1.0, 0.0, 0.0]]).unwrap();
        let next = renormalize(&m, &[ZERO; 2]).unwrap();
        assert_eq!(next, m);
    }

    #[test]
    fn closed_form_normalization() {
        let m = MagnetizationField::constant(1, [1.0, 0.0, 0.0]).unwrap();
        let next = renormalize(&m, &[[0.0, 1.0, 0.0]]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((next[0][0] - s).abs() <= f64::EPSILON && (next[0][1] - s).abs() <= f64::EPSILON && next[0][2] == 0.0);
    }

    #[test]
    fn guard_rejects_collapsed_state() {
        let m = MagnetizationField::constant(2, [1.0, 0.0, 0.0]).unwrap();
        let err = renormalize(&m, &[ZERO, [-0.9, 0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, StepError::Renormalization { node: 1, .. }));
    }

    #[test]
    fn projection_increment_bound_for_random_tangents() {
        use rand::Rng;
        let mut rng = crate::rng::path_rng(11, 0);
        for _ in 0..10_000 {
            let raw: Vec3 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let Ok(m) = MagnetizationField::from_normalized(vec![raw]) else { continue };
            let (t1, t2) = crate::frames::node_frame(m[0]);
            let (a, b): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let v = add(scale(a, t1), scale(b, t2));
            assert!(dot(v, m[0]).abs() < 1e-14);
            let next = renormalize(&m, &[v]).unwrap();
            let excess = norm(sub(sub(next[0], m[0]), v));
            assert!(excess <= (1.0 + norm_sq(v)).sqrt() - 1.0 + 1e-14);
            assert!(excess <= 0.5 * norm_sq(v) + 1e-14);
        }
    }

    #[test]
    fn scheme_params_validation() {
        assert!(SchemeParams::new(1.0, 10, 0.75).is_ok());
        assert_eq!(SchemeParams::new(1.0, 10, 0.5).unwrap_err(), SchemeError::Theta(0.5));
        assert_eq!(SchemeParams::new(-1.0, 10, 1.0).unwrap_err(), SchemeError::FinalTime(-1.0));
        assert_eq!(SchemeParams::new(1.0, 0, 1.0).unwrap_err(), SchemeError::Steps);
        assert_eq!(SchemeParams { final_time: 0.0, steps: 0, theta: 2.0 }.validate().len(), 3);
        assert_eq!(SchemeParams::new(1.0, 4, 1.0).unwrap().dt(), 0.25);
    }
}
