//! Nodal magnetization fields.

use thiserror::Error;

use crate::vec3::{norm, normalized, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("node {node} has a zero-length or non-finite vector")]
    Degenerate { node: usize },
    #[error("node {node} has |m| = {magnitude}, outside the unit-sphere tolerance {tol}")]
    OffSphere { node: usize, magnitude: f64, tol: f64 },
}

/// Per-node unit vectors, the discrete magnetization.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnetizationField(Vec<Vec3>);

impl MagnetizationField {
    /// Normalizes every node; zero or non-finite vectors are rejected.
    pub fn from_normalized(vectors: Vec<Vec3>) -> Result<Self, FieldError> {
        vectors
            .into_iter()
            .enumerate()
            .map(|(node, v)| normalized(v).ok_or(FieldError::Degenerate { node }))
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }

    /// Accepts vectors as-is after checking `||m_j| - 1| <= tol`.
    pub fn from_unit(vectors: Vec<Vec3>, tol: f64) -> Result<Self, FieldError> {
        for (node, v) in vectors.iter().enumerate() {
            let magnitude = norm(*v);
            if magnitude.is_nan() || (magnitude - 1.0).abs() > tol {
                return Err(FieldError::OffSphere { node, magnitude, tol });
            }
        }
        Ok(Self(vectors))
    }

    pub fn constant(n: usize, v: Vec3) -> Result<Self, FieldError> {
        Self::from_normalized(vec![v; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Vec3] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Vec3> {
        self.0
    }

    /// `max_j ||m_j| - 1|`
    pub fn max_sphere_defect(&self) -> f64 {
        self.0.iter().map(|v| (norm(*v) - 1.0).abs()).fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for MagnetizationField {
    type Output = Vec3;

    fn index(&self, j: usize) -> &Vec3 {
        &self.0[j]
    }
}
