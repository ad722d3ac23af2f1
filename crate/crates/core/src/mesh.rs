//! P1 finite elements on uniform meshes of an interval or a rectangle.
//!
//! The mass matrix is lumped (diagonal), so L² pairings of nodal fields are
//! mass-weighted nodal dot products. Rectangles are split into right
//! triangles along one diagonal, which keeps every off-diagonal stiffness
//! entry nonpositive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::CsrMatrix;
use crate::vec3::{dot, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("unsupported mesh dimension {0} (expected 1 or 2)")]
    Dimension(usize),
    #[error("expected {expected} {what}, got {got}")]
    Arity { what: &'static str, expected: usize, got: usize },
    #[error("extent along axis {axis} must be positive and finite, got {value}")]
    Extent { axis: usize, value: f64 },
    #[error("node count along axis {axis} must be at least 2, got {value}")]
    NodeCount { axis: usize, value: usize },
    #[error("field has {got} nodes but the mesh has {expected}")]
    FieldLength { expected: usize, got: usize },
}

/// Geometry of a uniform mesh: `D = [0, extents[0]] (× [0, extents[1]])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub dimension: usize,
    pub extents: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl MeshSpec {
    pub fn interval(length: f64, nodes: usize) -> Self {
        Self { dimension: 1, extents: vec![length], nodes: vec![nodes] }
    }

    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Self {
        Self { dimension: 2, extents: vec![lx, ly], nodes: vec![nx, ny] }
    }

    /// All violations, not only the first.
    pub fn validate(&self) -> Vec<MeshError> {
        let mut errors = Vec::new();
        if !(1..=2).contains(&self.dimension) {
            errors.push(MeshError::Dimension(self.dimension));
            return errors;
        }
        if self.extents.len() != self.dimension {
            errors.push(MeshError::Arity { what: "extents", expected: self.dimension, got: self.extents.len() });
        }
        if self.nodes.len() != self.dimension {
            errors.push(MeshError::Arity { what: "node counts", expected: self.dimension, got: self.nodes.len() });
        }
        for (axis, &value) in self.extents.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                errors.push(MeshError::Extent { axis, value });
            }
        }
        for (axis, &value) in self.nodes.iter().enumerate() {
            if value < 2 {
                errors.push(MeshError::NodeCount { axis, value });
            }
        }
        errors
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().product()
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    spec: MeshSpec,
    coords: Vec<[f64; 2]>,
    elements: Vec<Vec<usize>>,
    lumped_mass: Vec<f64>,
    stiffness: CsrMatrix,
}

pub fn build_mesh(spec: &MeshSpec) -> Result<Mesh, MeshError> {
    if let Some(err) = spec.validate().into_iter().next() {
        return Err(err);
    }
    Ok(match spec.dimension {
        1 => build_interval(spec),
        _ => build_rectangle(spec),
    })
}

fn build_interval(spec: &MeshSpec) -> Mesh {
    let n = spec.nodes[0];
    let length = spec.extents[0];
    let h = length / (n - 1) as f64;
    let coords = (0..n).map(|j| [j as f64 * h, 0.0]).collect();
    let elements: Vec<Vec<usize>> = (0..n - 1).map(|e| vec![e, e + 1]).collect();
    let mut lumped_mass = vec![0.0; n];
    let mut triplets = Vec::with_capacity(4 * (n - 1));
    for el in &elements {
        let (a, b) = (el[0], el[1]);
        lumped_mass[a] += 0.5 * h;
        lumped_mass[b] += 0.5 * h;
        let k = 1.0 / h;
        triplets.extend([(a, a, k), (b, b, k), (a, b, -k), (b, a, -k)]);
    }
    Mesh { spec: spec.clone(), coords, elements, lumped_mass, stiffness: CsrMatrix::from_triplets(n, n, &triplets) }
}

fn build_rectangle(spec: &MeshSpec) -> Mesh {
    let (nx, ny) = (spec.nodes[0], spec.nodes[1]);
    let hx = spec.extents[0] / (nx - 1) as f64;
    let hy = spec.extents[1] / (ny - 1) as f64;
    let index = |i: usize, j: usize| j * nx + i;
    let mut coords = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            coords.push([i as f64 * hx, j as f64 * hy]);
        }
    }
    let mut elements = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let (a, b, c, d) = (index(i, j), index(i + 1, j), index(i + 1, j + 1), index(i, j + 1));
            elements.push(vec![a, b, c]);
            elements.push(vec![a, c, d]);
        }
    }
    let n = nx * ny;
    let mut lumped_mass = vec![0.0; n];
    let mut triplets = Vec::with_capacity(9 * elements.len());
    for el in &elements {
        let p: Vec<[f64; 2]> = el.iter().map(|&v| coords[v]).collect();
        // Gradients of the barycentric coordinates are (b_i, c_i) / (2 area).
        let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
        let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
        let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
        debug_assert!(area > 0.0);
        for (a, &va) in el.iter().enumerate() {
            lumped_mass[va] += area / 3.0;
            for (bb, &vb) in el.iter().enumerate() {
                triplets.push((va, vb, (b[a] * b[bb] + c[a] * c[bb]) / (4.0 * area)));
            }
        }
    }
    Mesh { spec: spec.clone(), coords, elements, lumped_mass, stiffness: CsrMatrix::from_triplets(n, n, &triplets) }
}

impl Mesh {
    pub fn spec(&self) -> &MeshSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    /// Coordinates of node `j` (length equals the dimension).
    pub fn point(&self, j: usize) -> &[f64] {
        &self.coords[j][..self.spec.dimension]
    }

    pub fn elements(&self) -> &[Vec<usize>] {
        &self.elements
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped_mass
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn measure(&self) -> f64 {
        self.spec.extents.iter().product()
    }

    /// Largest off-diagonal stiffness entry; nonpositive for the meshes built here.
    pub fn max_offdiagonal_stiffness(&self) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for i in 0..self.node_count() {
            for (j, v) in self.stiffness.row(i) {
                if i != j {
                    max = max.max(v);
                }
            }
        }
        max
    }

    pub fn check_field(&self, len: usize) -> Result<(), MeshError> {
        if len == self.node_count() {
            Ok(())
        } else {
            Err(MeshError::FieldLength { expected: self.node_count(), got: len })
        }
    }

    /// Lumped L² inner product `Σ_j μ_j u_j·w_j`.
    pub fn l2_inner(&self, u: &[Vec3], w: &[Vec3]) -> f64 {
        debug_assert_eq!(u.len(), w.len());
        self.lumped_mass.iter().zip(u.iter().zip(w)).map(|(&mu, (&a, &b))| mu * dot(a, b)).sum()
    }

    pub fn l2_norm_sq(&self, u: &[Vec3]) -> f64 {
        self.l2_inner(u, u)
    }

    /// Lumped L⁴ norm to the fourth power, `Σ_j μ_j |u_j|⁴`.
    pub fn l4_norm_pow4(&self, u: &[Vec3]) -> f64 {
        self.lumped_mass.iter().zip(u).map(|(&mu, &a)| mu * dot(a, a) * dot(a, a)).sum()
    }

    /// Gradient pairing `(∇u, ∇w)` summed over the three components.
    pub fn grad_inner(&self, u: &[Vec3], w: &[Vec3]) -> f64 {
        debug_assert_eq!(u.len(), w.len());
        let mut total = 0.0;
        for (i, wi) in w.iter().enumerate() {
            let mut ku = [0.0; 3];
            for (j, k) in self.stiffness.row(i) {
                for c in 0..3 {
                    ku[c] += k * u[j][c];
                }
            }
            total += dot(ku, *wi);
        }
        total
    }

    pub fn grad_norm_sq(&self, u: &[Vec3]) -> f64 {
        self.grad_inner(u, u)
    }

    /// Discrete Dirichlet energy `‖∇m‖²`, i.e. `Σ_c m_cᵀ K m_c`.
    pub fn dirichlet_energy(&self, m: &[Vec3]) -> Result<f64, MeshError> {
        self.check_field(m.len())?;
        // The quadratic form can dip below zero by round-off for constant fields.
        Ok(self.grad_norm_sq(m).max(0.0))
    }
}
