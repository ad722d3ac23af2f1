//! One linear solve per time step: the tangential increment `v ⊥ m`.
//!
//! With the lumped mass, testing against `φ = t^a_j` (hat function at node
//! `j` times a frame vector) gives, for the coordinates of `v` in the frames,
//!
//! ```text
//! μ_j (t^b_k − m_j × t^b_k)·t^a_j δ_jk + 2θΔt K_jk t^b_k·t^a_j
//!     = −2Δt Σ_k K_jk m_k·t^a_j
//!       + μ_j [(Id − m_j×)(A_j + ½Δt S_j)]·t^a_j
//! ```
//!
//! where `A = m × GΔW` and `S = Σ_i (m × G_i) × G_i`. The mass block is
//! `μ_j [[1, 1], [−1, 1]]`: identity plus an exactly skew part.

use thiserror::Error;

use crate::field::MagnetizationField;
use crate::frames::{build_frames, FrameError, TangentFrame};
use crate::mesh::Mesh;
use crate::noise::{NoiseError, NoiseModel, WienerIncrement};
use crate::solver::{LinearSolver, SolverError};
use crate::sparse::CsrMatrix;
use crate::vec3::{add, cross, dot, id_minus_cross, scale, sub, Vec3};

#[derive(Debug, Error)]
pub enum TangentError {
    #[error("θ = {0} is outside the admissible interval (1/2, 1]")]
    Theta(f64),
    #[error("time step must be positive and finite, got {0}")]
    TimeStep(f64),
    #[error("field has {got} nodes but the mesh has {expected}")]
    FieldLength { expected: usize, got: usize },
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub fn check_theta(theta: f64) -> Result<(), TangentError> {
    if theta > 0.5 && theta <= 1.0 {
        Ok(())
    } else {
        Err(TangentError::Theta(theta))
    }
}

#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub frames: TangentFrame,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TangentUpdate {
    pub v: Vec<Vec3>,
    /// Interleaved frame coordinates `(α_0, β_0, α_1, …)`.
    pub coords: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

impl TangentUpdate {
    /// `max_j |v_j·m_j|`
    pub fn max_tangency_defect(&self, m: &MagnetizationField) -> f64 {
        self.v.iter().zip(m.as_slice()).map(|(&v, &mj)| dot(v, mj).abs()).fold(0.0, f64::max)
    }
}

/// Nodal noise term `A = m × GΔW`.
pub fn noise_term(m: &MagnetizationField, increment: &WienerIncrement) -> Vec<Vec3> {
    m.as_slice().iter().zip(&increment.field).map(|(&mj, &gj)| cross(mj, gj)).collect()
}

fn validate(m: &MagnetizationField, mesh: &Mesh, theta: f64, dt: f64) -> Result<(), TangentError> {
    check_theta(theta)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(TangentError::TimeStep(dt));
    }
    if m.len() != mesh.node_count() {
        return Err(TangentError::FieldLength { expected: mesh.node_count(), got: m.len() });
    }
    Ok(())
}

pub fn assemble(
    m: &MagnetizationField,
    increment: &WienerIncrement,
    noise: &NoiseModel,
    mesh: &Mesh,
    theta: f64,
    dt: f64,
) -> Result<ReducedSystem, TangentError> {
    validate(m, mesh, theta, dt)?;
    if increment.field.len() != mesh.node_count() {
        return Err(TangentError::FieldLength { expected: mesh.node_count(), got: increment.field.len() });
    }
    let frames = build_frames(m)?;
    let correction = noise.ito_correction(m.as_slice())?;
    let a = noise_term(m, increment);
    let ms = m.as_slice();
    let n = mesh.node_count();
    let stiffness = mesh.stiffness();
    let mass = mesh.lumped_mass();
    let mut triplets = Vec::with_capacity(4 * stiffness.nnz() + 4 * n);
    let mut rhs = vec![0.0; 2 * n];
    for j in 0..n {
        let tj = [frames.t1[j], frames.t2[j]];
        let forcing = id_minus_cross(ms[j], add(a[j], scale(0.5 * dt, correction[j])));
        let mut km = [0.0; 3];
        for (k, kjk) in stiffness.row(j) {
            let tk = [frames.t1[k], frames.t2[k]];
            for (ra, ta) in tj.iter().enumerate() {
                for (cb, tb) in tk.iter().enumerate() {
                    triplets.push((2 * j + ra, 2 * k + cb, 2.0 * theta * dt * kjk * dot(*tb, *ta)));
                }
            }
            for c in 0..3 {
                km[c] += kjk * ms[k][c];
            }
        }
        // m × t¹ = t², m × t² = −t¹
        for (ra, row) in [[1.0, 1.0], [-1.0, 1.0]].iter().enumerate() {
            for (cb, &entry) in row.iter().enumerate() {
                triplets.push((2 * j + ra, 2 * j + cb, mass[j] * entry));
            }
            rhs[2 * j + ra] = -2.0 * dt * dot(km, tj[ra]) + mass[j] * dot(forcing, tj[ra]);
        }
    }
    Ok(ReducedSystem { frames, matrix: CsrMatrix::from_triplets(2 * n, 2 * n, &triplets), rhs })
}

pub fn assemble_and_solve(
    m: &MagnetizationField,
    increment: &WienerIncrement,
    noise: &NoiseModel,
    mesh: &Mesh,
    theta: f64,
    dt: f64,
    solver: &dyn LinearSolver,
) -> Result<TangentUpdate, TangentError> {
    let system = assemble(m, increment, noise, mesh, theta, dt)?;
    let report = solver.solve(&system.matrix, &system.rhs)?;
    let v = system.frames.expand(&report.x);
    Ok(TangentUpdate {
        v,
        coords: report.x,
        iterations: report.iterations,
        relative_residual: report.relative_residual,
    })
}

/// Both sides of the energy identity obtained by testing the step equation
/// with `φ = v − A`:
///
/// ```text
/// 2(∇m, ∇v) = −‖v − A‖²/Δt − 2θ‖∇v‖² + 2θ(∇v, ∇A) + 2(∇m, ∇A)
///             + ½ ((Id − m×) S, v − A)
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualIdentity {
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs − rhs|`
    pub residual: f64,
    /// Sum of the magnitudes of all terms.
    pub scale: f64,
}

pub fn step_residual_identity(
    m: &MagnetizationField,
    v: &[Vec3],
    increment: &WienerIncrement,
    noise: &NoiseModel,
    mesh: &Mesh,
    theta: f64,
    dt: f64,
) -> Result<ResidualIdentity, TangentError> {
    validate(m, mesh, theta, dt)?;
    let ms = m.as_slice();
    let a = noise_term(m, increment);
    let correction = noise.ito_correction(ms)?;
    let v_minus_a: Vec<Vec3> = v.iter().zip(&a).map(|(&x, &y)| sub(x, y)).collect();
    let projected: Vec<Vec3> = ms.iter().zip(&correction).map(|(&mj, &s)| id_minus_cross(mj, s)).collect();
    let lhs = 2.0 * mesh.grad_inner(ms, v);
    let terms = [
        -mesh.l2_norm_sq(&v_minus_a) / dt,
        -2.0 * theta * mesh.grad_norm_sq(v),
        2.0 * theta * mesh.grad_inner(v, &a),
        2.0 * mesh.grad_inner(ms, &a),
        0.5 * mesh.l2_inner(&projected, &v_minus_a),
    ];
    let rhs: f64 = terms.iter().sum();
    let scale = lhs.abs() + terms.iter().map(|t| t.abs()).sum::<f64>();
    Ok(ResidualIdentity { lhs, rhs, residual: (lhs - rhs).abs(), scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, MeshSpec};
    use crate::noise::{build_noise, NoiseSpec};
    use crate::solver::BandedLu;

    #[test]
    fn constant_state_without_noise_is_stationary() {
        let mesh = build_mesh(&MeshSpec::interval(1.0, 6)).unwrap();
        let noise = build_noise(&mesh, &NoiseSpec { modes: 0, ..NoiseSpec::default() }).unwrap();
        let m = MagnetizationField::constant(6, [0.0, 0.6, 0.8]).unwrap();
        let update =
            assemble_and_solve(&m, &noise.zero_increment(0.01, 0), &noise, &mesh, 1.0, 0.01, &BandedLu).unwrap();
        assert!(update.v.iter().all(|v| *v == [0.0; 3]));
    }

    #[test]
    fn theta_outside_interval_is_rejected() {
        let mesh = build_mesh(&MeshSpec::interval(1.0, 3)).unwrap();
        let noise = build_noise(&mesh, &NoiseSpec { modes: 0, ..NoiseSpec::default() }).unwrap();
        let m = MagnetizationField::constant(3, [0.0, 0.0, 1.0]).unwrap();
        for theta in [0.5, 0.2, 1.0 + 1e-12, f64::NAN] {
            let err = assemble(&m, &noise.zero_increment(0.1, 0), &noise, &mesh, theta, 0.1).unwrap_err();
            assert!(matches!(err, TangentError::Theta(_)));
        }
        assert!(matches!(
            assemble(&m, &noise.zero_increment(0.1, 0), &noise, &mesh, 0.75, 0.0).unwrap_err(),
            TangentError::TimeStep(_)
        ));
    }

    #[test]
    fn mass_block_is_identity_plus_skew() {
        let mesh = build_mesh(&MeshSpec::interval(1.0, 4)).unwrap();
        let noise = build_noise(&mesh, &NoiseSpec { modes: 0, ..NoiseSpec::default() }).unwrap();
        let m = MagnetizationField::from_normalized(vec![
            [1.0, 2.0, 3.0],
            [0.0, 1.0, 0.0],
            [-1.0, 0.2, 0.1],
            [0.3, 0.3, -1.0],
        ])
        .unwrap();
        let dt = 0.01;
        let sys = assemble(&m, &noise.zero_increment(dt, 0), &noise, &mesh, 1.0, dt).unwrap();
        let frames = &sys.frames;
        for j in 0..4 {
            let mu = mesh.lumped_mass()[j];
            let kjj = 2.0 * dt * mesh.stiffness().get(j, j);
            let block = [
                [sys.matrix.get(2 * j, 2 * j), sys.matrix.get(2 * j, 2 * j + 1)],
                [sys.matrix.get(2 * j + 1, 2 * j), sys.matrix.get(2 * j + 1, 2 * j + 1)],
            ];
            // The analytic skew block agrees with the cross products it encodes.
            for (a, ta) in [frames.t1[j], frames.t2[j]].iter().enumerate() {
                for (b, tb) in [frames.t1[j], frames.t2[j]].iter().enumerate() {
                    let exact = mu * dot(id_minus_cross(m[j], *tb), *ta) + kjj * dot(*tb, *ta);
                    assert!((block[a][b] - exact).abs() < 1e-14);
                }
            }
            assert!((block[0][0] - mu - kjj).abs() < 1e-14);
            assert!((block[0][1] + block[1][0]).abs() < 1e-13);
        }
    }
}
