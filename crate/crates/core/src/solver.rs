//! Linear solvers for the reduced tangent-plane systems, selected by name.
//!
//! The systems are nonsymmetric with a positive-definite symmetric part, so
//! Gaussian elimination needs no pivoting and restarted GMRES converges.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::CsrMatrix;

/// Largest node count (two unknowns per node) handled by the direct solver under `auto`.
pub const AUTO_DIRECT_MAX_NODES: usize = 4096;
const GMRES_RESTART: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("unknown solver method `{name}` (registered: {known})")]
    UnknownMethod { name: String, known: String },
    #[error("zero pivot at row {row} (diagonal range {min_diag:.3e}..{max_diag:.3e})")]
    Singular { row: usize, min_diag: f64, max_diag: f64 },
    #[error(
        "no convergence after {iterations} iterations: relative residual {residual:.3e} > {tol:.1e} \
         (diagonal range {min_diag:.3e}..{max_diag:.3e})"
    )]
    NonConvergence { iterations: usize, residual: f64, tol: f64, min_diag: f64, max_diag: f64 },
    #[error("system is {rows}x{cols} with a right-hand side of length {rhs}")]
    Shape { rows: usize, cols: usize, rhs: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Registered solver name: `auto`, `direct` or `iterative` by default.
    pub method: String,
    pub tol: f64,
    /// Zero selects `10 · unknowns`.
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { method: "auto".into(), tol: 1e-10, max_iter: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖b − Ax‖ / ‖b‖` (zero when `b = 0`).
    pub relative_residual: f64,
}

pub trait LinearSolver: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn solve(&self, a: &CsrMatrix, b: &[f64]) -> Result<SolveReport, SolverError>;
}

pub type SolverFactory = fn(&SolverSettings) -> Box<dyn LinearSolver>;

#[derive(Clone)]
pub struct SolverRegistry {
    factories: BTreeMap<String, SolverFactory>,
}

impl fmt::Debug for SolverRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SolverRegistry").field("methods", &self.names()).finish()
    }
}

impl Default for SolverRegistry {
    fn default() -> Self {
        let mut registry = Self { factories: BTreeMap::new() };
        registry.register("direct", |_| Box::new(BandedLu));
        registry.register("iterative", |s| Box::new(Gmres::from_settings(s)));
        registry.register("auto", |s| Box::new(Auto { iterative: Gmres::from_settings(s) }));
        registry
    }
}

impl SolverRegistry {
    pub fn register(&mut self, name: &str, factory: SolverFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn create(&self, settings: &SolverSettings) -> Result<Box<dyn LinearSolver>, SolverError> {
        match self.factories.get(&settings.method) {
            Some(factory) => Ok(factory(settings)),
            None => Err(SolverError::UnknownMethod { name: settings.method.clone(), known: self.names().join(", ") }),
        }
    }
}

pub fn create_solver(settings: &SolverSettings) -> Result<Box<dyn LinearSolver>, SolverError> {
    SolverRegistry::default().create(settings)
}

fn check_shape(a: &CsrMatrix, b: &[f64]) -> Result<(), SolverError> {
    if a.n_rows() != a.n_cols() || a.n_rows() != b.len() {
        return Err(SolverError::Shape { rows: a.n_rows(), cols: a.n_cols(), rhs: b.len() });
    }
    Ok(())
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn diag_range(a: &CsrMatrix) -> (f64, f64) {
    a.diagonal().iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d.abs()), hi.max(d.abs())))
}

pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let nb = norm2(b);
    if nb == 0.0 {
        norm2(&r)
    } else {
        norm2(&r) / nb
    }
}

/// Band LU factorization without pivoting.
#[derive(Debug, Clone, Copy, Default)]
pub struct BandedLu;

impl LinearSolver for BandedLu {
    fn name(&self) -> &str {
        "direct"
    }

    fn solve(&self, a: &CsrMatrix, b: &[f64]) -> Result<SolveReport, SolverError> {
        check_shape(a, b)?;
        let n = b.len();
        let (p, q) = a.bandwidths();
        let width = p + q + 1;
        let mut band = vec![0.0; n * width];
        let at = |i: usize, j: usize| i * width + (j + p - i);
        for i in 0..n {
            for (j, v) in a.row(i) {
                band[at(i, j)] = v;
            }
        }
        for k in 0..n {
            let pivot = band[at(k, k)];
            if pivot == 0.0 || !pivot.is_finite() {
                let (min_diag, max_diag) = diag_range(a);
                return Err(SolverError::Singular { row: k, min_diag, max_diag });
            }
            let j_end = (k + q + 1).min(n);
            for i in k + 1..(k + p + 1).min(n) {
                let l = band[at(i, k)] / pivot;
                if l == 0.0 {
                    continue;
                }
                band[at(i, k)] = l;
                for j in k + 1..j_end {
                    band[at(i, j)] -= l * band[at(k, j)];
                }
            }
        }
        let mut x = b.to_vec();
        for i in 0..n {
            let start = i.saturating_sub(p);
            let s: f64 = (start..i).map(|j| band[at(i, j)] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let end = (i + q + 1).min(n);
            let s: f64 = (i + 1..end).map(|j| band[at(i, j)] * x[j]).sum();
            x[i] = (x[i] - s) / band[at(i, i)];
        }
        let relative_residual = relative_residual(a, &x, b);
        Ok(SolveReport { x, iterations: 1, relative_residual })
    }
}

/// Restarted GMRES with right Jacobi preconditioning.
#[derive(Debug, Clone)]
pub struct Gmres {
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Gmres {
    pub fn from_settings(settings: &SolverSettings) -> Self {
        Self { tol: settings.tol, max_iter: settings.max_iter, restart: GMRES_RESTART }
    }
}

impl LinearSolver for Gmres {
    fn name(&self) -> &str {
        "iterative"
    }

    fn solve(&self, a: &CsrMatrix, b: &[f64]) -> Result<SolveReport, SolverError> {
        check_shape(a, b)?;
        let n = b.len();
        let max_iter = if self.max_iter == 0 { 10 * n.max(1) } else { self.max_iter };
        let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
        let nb = norm2(b);
        let mut x = vec![0.0; n];
        if nb == 0.0 {
            return Ok(SolveReport { x, iterations: 0, relative_residual: 0.0 });
        }
        let restart = self.restart.min(n).max(1);
        let mut iterations = 0;
        let mut w = vec![0.0; n];
        while iterations < max_iter {
            let ax = a.matvec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let beta = norm2(&r);
            if beta / nb <= self.tol {
                break;
            }
            let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
            let mut h = vec![vec![0.0; restart]; restart + 1];
            let mut cs = vec![0.0; restart];
            let mut sn = vec![0.0; restart];
            let mut g = vec![0.0; restart + 1];
            g[0] = beta;
            let mut used = 0;
            for k in 0..restart {
                if iterations >= max_iter {
                    break;
                }
                iterations += 1;
                let z: Vec<f64> = basis[k].iter().zip(&inv_diag).map(|(v, d)| v * d).collect();
                a.matvec_into(&z, &mut w);
                // Modified Gram–Schmidt.
                for (i, vi) in basis.iter().enumerate() {
                    let hik: f64 = w.iter().zip(vi).map(|(a, b)| a * b).sum();
                    h[i][k] = hik;
                    for (wj, vj) in w.iter_mut().zip(vi) {
                        *wj -= hik * vj;
                    }
                }
                let hn = norm2(&w);
                h[k + 1][k] = hn;
                for i in 0..k {
                    let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                    h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                    h[i][k] = t;
                }
                let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
                cs[k] = h[k][k] / denom;
                sn[k] = h[k + 1][k] / denom;
                h[k][k] = denom;
                h[k + 1][k] = 0.0;
                g[k + 1] = -sn[k] * g[k];
                g[k] *= cs[k];
                used = k + 1;
                if (g[k + 1].abs() / nb) <= self.tol || hn == 0.0 {
                    break;
                }
                basis.push(w.iter().map(|v| v / hn).collect());
            }
            let mut y = vec![0.0; used];
            for i in (0..used).rev() {
                let s: f64 = (i + 1..used).map(|j| h[i][j] * y[j]).sum();
                y[i] = (g[i] - s) / h[i][i];
            }
            for (i, yi) in y.iter().enumerate() {
                for (xj, (vj, dj)) in x.iter_mut().zip(basis[i].iter().zip(&inv_diag)) {
                    *xj += yi * vj * dj;
                }
            }
        }
        let residual = relative_residual(a, &x, b);
        if residual <= self.tol {
            Ok(SolveReport { x, iterations, relative_residual: residual })
        } else {
            let (min_diag, max_diag) = diag_range(a);
            Err(SolverError::NonConvergence { iterations, residual, tol: self.tol, min_diag, max_diag })
        }
    }
}

/// Direct factorization up to [`AUTO_DIRECT_MAX_NODES`] nodes, GMRES above.
#[derive(Debug, Clone)]
pub struct Auto {
    iterative: Gmres,
}

impl LinearSolver for Auto {
    fn name(&self) -> &str {
        "auto"
    }

    fn solve(&self, a: &CsrMatrix, b: &[f64]) -> Result<SolveReport, SolverError> {
        if b.len() <= 2 * AUTO_DIRECT_MAX_NODES {
            BandedLu.solve(a, b)
        } else {
            self.iterative.solve(a, b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_system(n: usize) -> (CsrMatrix, Vec<f64>) {
        // Tridiagonal with a skew part: 4 on the diagonal, -1 ± 0.5 off it.
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.5));
                t.push((i + 1, i, -0.5));
            }
        }
        let b = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        (CsrMatrix::from_triplets(n, n, &t), b)
    }

    #[test]
    fn direct_and_iterative_agree() {
        let (a, b) = test_system(40);
        let direct = BandedLu.solve(&a, &b).unwrap();
        let gmres = Gmres { tol: 1e-12, max_iter: 0, restart: 7 }.solve(&a, &b).unwrap();
        assert!(direct.relative_residual < 1e-14);
        assert!(gmres.relative_residual <= 1e-12);
        for (x, y) in direct.x.iter().zip(&gmres.x) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn registry_resolves_names() {
        let registry = SolverRegistry::default();
        assert_eq!(registry.names(), vec!["auto", "direct", "iterative"]);
        for name in ["auto", "direct", "iterative"] {
            let s = registry.create(&SolverSettings { method: name.into(), ..SolverSettings::default() }).unwrap();
            assert_eq!(s.name(), name);
        }
        let err = registry.create(&SolverSettings { method: "cg".into(), ..SolverSettings::default() }).unwrap_err();
        assert!(matches!(err, SolverError::UnknownMethod { .. }));
    }

    #[test]
    fn iterative_reports_non_convergence() {
        let (a, b) = test_system(30);
        let err = Gmres { tol: 1e-14, max_iter: 2, restart: 2 }.solve(&a, &b).unwrap_err();
        assert!(matches!(err, SolverError::NonConvergence { iterations: 2, .. }));
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let (a, _) = test_system(5);
        let r = Gmres { tol: 1e-10, max_iter: 0, restart: 5 }.solve(&a, &[0.0; 5]).unwrap();
        assert_eq!(r.x, vec![0.0; 5]);
        assert!(BandedLu.solve(&a, &[0.0; 4]).is_err());
    }
}
