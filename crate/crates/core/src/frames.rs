//! Orthonormal bases of the nodal tangent planes `m_j^⊥`.

use thiserror::Error;

use crate::field::MagnetizationField;
use crate::vec3::{cross, norm, scale, Vec3};

/// Magnitude deviation beyond which a field is treated as corrupted.
pub const FRAME_SPHERE_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("node {node}: |m| = {magnitude} deviates from 1 by more than {FRAME_SPHERE_TOL}")]
    OffSphere { node: usize, magnitude: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame {
    pub t1: Vec<Vec3>,
    pub t2: Vec<Vec3>,
}

/// Frame at a single node.
///
/// `t¹ = e_k × m / |e_k × m|` where `e_k` is the axis of the smallest
/// `|m_k|` (ties go to the higher index), and `t² = m × t¹` normalized.
/// For `m = e_z` this gives `(e_x, e_y)`.
pub fn node_frame(m: Vec3) -> (Vec3, Vec3) {
    let mut axis = 0;
    for k in 1..3 {
        if m[k].abs() <= m[axis].abs() {
            axis = k;
        }
    }
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let raw = cross(e, m);
    let t1 = scale(1.0 / norm(raw), raw);
    let raw2 = cross(m, t1);
    let t2 = scale(1.0 / norm(raw2), raw2);
    (t1, t2)
}

pub fn build_frames(m: &MagnetizationField) -> Result<TangentFrame, FrameError> {
    let mut t1 = Vec::with_capacity(m.len());
    let mut t2 = Vec::with_capacity(m.len());
    for (node, &mj) in m.as_slice().iter().enumerate() {
        let magnitude = norm(mj);
        if magnitude.is_nan() || (magnitude - 1.0).abs() > FRAME_SPHERE_TOL {
            return Err(FrameError::OffSphere { node, magnitude });
        }
        let (a, b) = node_frame(mj);
        t1.push(a);
        t2.push(b);
    }
    Ok(TangentFrame { t1, t2 })
}

impl TangentFrame {
    pub fn len(&self) -> usize {
        self.t1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t1.is_empty()
    }

    /// `v_j = α_j t¹_j + β_j t²_j` from interleaved coordinates `(α_0, β_0, α_1, …)`.
    pub fn expand(&self, coords: &[f64]) -> Vec<Vec3> {
        assert_eq!(coords.len(), 2 * self.len());
        self.t1
            .iter()
            .zip(&self.t2)
            .zip(coords.chunks_exact(2))
            .map(|((a, b), c)| [c[0] * a[0] + c[1] * b[0], c[0] * a[1] + c[1] * b[1], c[0] * a[2] + c[1] * b[2]])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vec3::dot;
    use proptest::prelude::*;

    #[test]
    fn canonical_frame_for_z() {
        let (t1, t2) = node_frame([0.0, 0.0, 1.0]);
        assert_eq!(t1, [1.0, 0.0, 0.0]);
        assert_eq!(t2, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn x_axis_frame_spans_yz() {
        let (t1, t2) = node_frame([1.0, 0.0, 0.0]);
        assert_eq!(t1[0], 0.0);
        assert_eq!(t2[0], 0.0);
        assert!(dot(t1, t2).abs() < 1e-15);
        assert!((norm(t1) - 1.0).abs() < 1e-15 && (norm(t2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_corrupted_state() {
        let m = MagnetizationField::from_unit(vec![[1.0, 0.0, 0.0], [0.0, 1.0 + 1e-5, 0.0]], 1e-3).unwrap();
        assert!(matches!(build_frames(&m), Err(FrameError::OffSphere { node: 1, .. })));
    }

    proptest! {
        #[test]
        fn frame_is_orthonormal(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            prop_assume!(x * x + y * y + z * z > 1e-6);
            let n = (x * x + y * y + z * z).sqrt();
            let m = [x / n, y / n, z / n];
            let (t1, t2) = node_frame(m);
            prop_assert!(dot(t1, m).abs() <= 1e-14);
            prop_assert!(dot(t2, m).abs() <= 1e-14);
            prop_assert!(dot(t1, t2).abs() <= 1e-14);
            prop_assert!((norm(t1) - 1.0).abs() <= 1e-14);
            prop_assert!((norm(t2) - 1.0).abs() <= 1e-14);
        }
    }
}
