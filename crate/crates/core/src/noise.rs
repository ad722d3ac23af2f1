//! Truncated spectral Q-Wiener noise.
//!
//! The covariance operator is diagonal in the Neumann cosine basis. Vector
//! mode `i` is the scalar eigenfunction number `i / 3` (ordered by
//! eigenvalue) pointing along coordinate axis `i % 3`, scaled by
//! `g = c (1 + λ)^(-s)`. Nodal samples are normalized in the lumped L² inner
//! product, so `‖G_i‖ = g_i` on the mesh.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::Mesh;
use crate::vec3::{cross, Vec3, ZERO};

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("{requested} noise modes requested but the mesh resolves only {available} distinct modes")]
    TooManyModes { requested: usize, available: usize },
    #[error("spectral decay exponent must be positive and finite, got {0}")]
    Decay(f64),
    #[error("noise amplitude must be nonnegative and finite, got {0}")]
    Amplitude(f64),
    #[error("time step must be positive and finite, got {0}")]
    TimeStep(f64),
    #[error("field has {got} nodes but the noise model is built on {expected}")]
    FieldLength { expected: usize, got: usize },
    #[error("expected {expected} mode coefficients, got {got}")]
    CoefficientCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Truncation count J; zero gives a deterministic run.
    pub modes: usize,
    /// Spectral decay exponent s.
    pub decay: f64,
    /// Amplitude c.
    pub amplitude: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { modes: 8, decay: 2.0, amplitude: 0.5 }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Vec<NoiseError> {
        let mut errors = Vec::new();
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            errors.push(NoiseError::Decay(self.decay));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            errors.push(NoiseError::Amplitude(self.amplitude));
        }
        errors
    }
}

/// One vector mode of the truncated expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMode {
    /// Cosine wave numbers per axis.
    pub wave_numbers: Vec<usize>,
    pub direction: usize,
    /// Neumann Laplacian eigenvalue λ.
    pub eigenvalue: f64,
    /// Multiplier g = c (1 + λ)^(-s).
    pub multiplier: f64,
}

/// Scalar Neumann cosine modes of the mesh's domain, ordered by eigenvalue
/// (ties broken by wave numbers).
pub fn scalar_modes(mesh: &Mesh) -> Vec<(Vec<usize>, f64)> {
    let spec = mesh.spec();
    let mut modes: Vec<(Vec<usize>, f64)> = match spec.dimension {
        1 => (0..spec.nodes[0]).map(|k| (vec![k], (k as f64 * PI / spec.extents[0]).powi(2))).collect(),
        _ => {
            let mut out = Vec::with_capacity(spec.nodes[0] * spec.nodes[1]);
            for k1 in 0..spec.nodes[0] {
                for k2 in 0..spec.nodes[1] {
                    let lambda =
                        (k1 as f64 * PI / spec.extents[0]).powi(2) + (k2 as f64 * PI / spec.extents[1]).powi(2);
                    out.push((vec![k1, k2], lambda));
                }
            }
            out
        }
    };
    modes.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    modes
}

#[derive(Debug, Clone)]
pub struct NoiseModel {
    spec: NoiseSpec,
    modes: Vec<NoiseMode>,
    /// `fields[i][j]` is G_i at node j.
    fields: Vec<Vec<Vec3>>,
    node_count: usize,
    hs_norm_sq: f64,
}

pub fn build_noise(mesh: &Mesh, spec: &NoiseSpec) -> Result<NoiseModel, NoiseError> {
    if let Some(err) = spec.validate().into_iter().next() {
        return Err(err);
    }
    let scalar = scalar_modes(mesh);
    let available = 3 * scalar.len();
    if spec.modes > available {
        return Err(NoiseError::TooManyModes { requested: spec.modes, available });
    }
    let extents = &mesh.spec().extents;
    let mut modes = Vec::with_capacity(spec.modes);
    let mut fields = Vec::with_capacity(spec.modes);
    for i in 0..spec.modes {
        let (wave_numbers, eigenvalue) = scalar[i / 3].clone();
        let direction = i % 3;
        let multiplier = spec.amplitude * (1.0 + eigenvalue).powf(-spec.decay);
        let profile: Vec<f64> = (0..mesh.node_count())
            .map(|j| {
                mesh.point(j)
                    .iter()
                    .zip(&wave_numbers)
                    .zip(extents)
                    .map(|((&x, &k), &l)| (k as f64 * PI * x / l).cos())
                    .product()
            })
            .collect();
        let norm_sq: f64 = profile.iter().zip(mesh.lumped_mass()).map(|(p, mu)| mu * p * p).sum();
        let factor = multiplier / norm_sq.sqrt();
        let field = profile
            .iter()
            .map(|&p| {
                let mut v = ZERO;
                v[direction] = factor * p;
                v
            })
            .collect();
        modes.push(NoiseMode { wave_numbers, direction, eigenvalue, multiplier });
        fields.push(field);
    }
    let hs_norm_sq = modes.iter().map(|m| (m.multiplier * (1.0 + m.eigenvalue)).powi(2)).sum();
    Ok(NoiseModel { spec: spec.clone(), modes, fields, node_count: mesh.node_count(), hs_norm_sq })
}

/// A sampled increment `GΔW = Σ_i ΔW_i G_i` for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerIncrement {
    pub step: usize,
    pub dt: f64,
    /// Scalar Brownian increments ΔW_i ~ N(0, Δt), one per mode.
    pub coefficients: Vec<f64>,
    pub field: Vec<Vec3>,
}

impl NoiseModel {
    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn is_deterministic(&self) -> bool {
        self.modes.is_empty() || self.spec.amplitude == 0.0
    }

    pub fn modes(&self) -> &[NoiseMode] {
        &self.modes
    }

    pub fn fields(&self) -> &[Vec<Vec3>] {
        &self.fields
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// `Σ_i g_i² (1 + λ_i)²`, the H² Hilbert–Schmidt norm proxy.
    pub fn hs_norm_sq(&self) -> f64 {
        self.hs_norm_sq
    }

    /// `Σ_i g_i² = ‖G‖²` as an operator into L².
    pub fn l2_trace(&self) -> f64 {
        self.modes.iter().map(|m| m.multiplier * m.multiplier).sum()
    }

    /// Draws exactly `J` standard normals in mode order.
    pub fn sample_coefficients<R: Rng + ?Sized>(&self, rng: &mut R, dt: f64) -> Result<Vec<f64>, NoiseError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(NoiseError::TimeStep(dt));
        }
        let sqrt_dt = dt.sqrt();
        Ok((0..self.modes.len())
            .map(|_| {
                let xi: f64 = rng.sample(StandardNormal);
                sqrt_dt * xi
            })
            .collect())
    }

    pub fn sample_increment<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        dt: f64,
        step: usize,
    ) -> Result<WienerIncrement, NoiseError> {
        let coefficients = self.sample_coefficients(rng, dt)?;
        self.increment_from_coefficients(coefficients, dt, step)
    }

    pub fn increment_from_coefficients(
        &self,
        coefficients: Vec<f64>,
        dt: f64,
        step: usize,
    ) -> Result<WienerIncrement, NoiseError> {
        if coefficients.len() != self.modes.len() {
            return Err(NoiseError::CoefficientCount { expected: self.modes.len(), got: coefficients.len() });
        }
        let field = self.combine(&coefficients);
        Ok(WienerIncrement { step, dt, coefficients, field })
    }

    /// `Σ_i w_i G_i` as a nodal field.
    pub fn combine(&self, weights: &[f64]) -> Vec<Vec3> {
        let mut field = vec![ZERO; self.node_count];
        for (w, g) in weights.iter().zip(&self.fields) {
            for (out, gj) in field.iter_mut().zip(g) {
                for c in 0..3 {
                    out[c] += w * gj[c];
                }
            }
        }
        field
    }

    pub fn zero_increment(&self, dt: f64, step: usize) -> WienerIncrement {
        WienerIncrement { step, dt, coefficients: vec![0.0; self.modes.len()], field: vec![ZERO; self.node_count] }
    }

    /// `S(m)_j = Σ_i (m_j × G_i(x_j)) × G_i(x_j)`, without the factor ½.
    pub fn ito_correction(&self, m: &[Vec3]) -> Result<Vec<Vec3>, NoiseError> {
        if m.len() != self.node_count {
            return Err(NoiseError::FieldLength { expected: self.node_count, got: m.len() });
        }
        let mut out = vec![ZERO; self.node_count];
        for g in &self.fields {
            for ((o, &mj), &gj) in out.iter_mut().zip(m).zip(g) {
                let term = cross(cross(mj, gj), gj);
                for c in 0..3 {
                    o[c] += term[c];
                }
            }
        }
        Ok(out)
    }

    /// `(G_i, a)` in the lumped L² pairing, for every mode.
    pub fn pairings(&self, mesh: &Mesh, a: &[Vec3]) -> Vec<f64> {
        self.fields.iter().map(|g| mesh.l2_inner(g, a)).collect()
    }

    /// Variance of `(GΔW, a)`: `Δt Σ_i (G_i, a)²`.
    pub fn probe_variance(&self, mesh: &Mesh, a: &[Vec3], dt: f64) -> f64 {
        dt * self.pairings(mesh, a).iter().map(|p| p * p).sum::<f64>()
    }
}
