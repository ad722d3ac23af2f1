//! Monte Carlo drivers and statistical diagnostics.
//!
//! Paths run concurrently but every reduction is accumulated in path-index
//! order, so results are bitwise independent of the thread count. All
//! statistical verdicts use 3σ half-widths.

use serde::Serialize;

use crate::io::fmt_f64;
use crate::mesh::Mesh;
use crate::rng::{path_rng, path_seed};
use crate::stepper::PathError;
use crate::vec3::{cross, sub, Vec3};
use crate::{Error, MagnetizationField, Simulation, Trajectory};

/// Number of standard errors used by every interval.
pub const SIGMA_MULTIPLIER: f64 = 3.0;

/// Runs `f(0..count)` on a rayon pool with `threads` workers (the global
/// pool when `None`), returning results in index order.
pub fn map_paths<T, F>(count: usize, threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let run = || (0..count).into_par_iter().map(&f).collect::<Vec<T>>();
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool construction")
            .install(run),
        None => run(),
    }
}

/// Sample mean with a 3σ half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    /// Unbiased sample variance of the individual values.
    pub variance: f64,
    pub half_width: f64,
    pub samples: usize,
}

impl MeanEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let samples = values.len();
        if samples == 0 {
            return Self { mean: f64::NAN, variance: f64::NAN, half_width: f64::NAN, samples };
        }
        let n = samples as f64;
        if values.iter().all(|&v| v == values[0]) {
            return Self { mean: values[0], variance: 0.0, half_width: 0.0, samples };
        }
        let mean = values.iter().sum::<f64>() / n;
        let variance =
            if samples > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let half_width = SIGMA_MULTIPLIER * (variance / n).sqrt();
        Self { mean, variance, half_width, samples }
    }

    pub fn contains(&self, value: f64) -> bool {
        (self.mean - value).abs() <= self.half_width
    }

    pub fn overlaps(&self, other: &MeanEstimate) -> bool {
        (self.mean - other.mean).abs() <= self.half_width + other.half_width
    }
}

/// A named pass/fail verdict for reports and summaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

/// Machine-readable outcome of one command: verdicts plus the full report.
#[derive(Debug, Clone, Serialize)]
pub struct Summary<T: Serialize> {
    pub command: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub report: T,
}

impl<T: Serialize> Summary<T> {
    pub fn new(command: &str, checks: Vec<Check>, report: T) -> Self {
        Self { command: command.to_string(), passed: all_passed(&checks), checks, report }
    }

    pub fn to_json(&self) -> Result<String, crate::io::IoError> {
        crate::io::to_json(self, "summary")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathFailure {
    pub path: usize,
    pub seed: u64,
    pub message: String,
}

// ---------------------------------------------------------------------------
// Single paths
// ---------------------------------------------------------------------------

/// Scalar digest of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathReport {
    pub steps: usize,
    pub dt: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub max_energy: f64,
    pub sum_v_sq: f64,
    pub sum_v_minus_a_sq: f64,
    pub sum_grad_v_sq: f64,
    pub max_sphere_defect: f64,
    pub max_tangency_defect: f64,
    pub max_residual: f64,
    /// `max residual / scale` of the per-step identity.
    pub max_relative_residual: f64,
    pub max_renormalization_excess: f64,
    pub max_solver_iterations: usize,
}

impl PathReport {
    pub fn new(t: &Trajectory) -> Self {
        let fold = |f: &dyn Fn(&crate::StepDiagnostics) -> f64, init: f64| t.steps.iter().map(f).fold(init, f64::max);
        let energies = t.energies();
        Self {
            steps: t.steps.len(),
            dt: t.dt,
            initial_energy: t.initial_energy,
            final_energy: *energies.last().expect("initial energy present"),
            max_energy: energies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            sum_v_sq: t.sum_v_sq(),
            sum_v_minus_a_sq: t.sum_v_minus_a_sq(),
            sum_grad_v_sq: t.sum_grad_v_sq(),
            max_sphere_defect: t.max_sphere_defect(),
            max_tangency_defect: t.max_tangency_defect(),
            max_residual: t.max_residual(),
            max_relative_residual: fold(
                &|d| if d.residual_scale > 0.0 { d.residual / d.residual_scale } else { d.residual },
                0.0,
            ),
            max_renormalization_excess: fold(&|d| d.energy - d.energy_pre_normalization, f64::NEG_INFINITY),
            max_solver_iterations: t.steps.iter().map(|d| d.solver_iterations).max().unwrap_or(0),
        }
    }

    /// Structural invariants every path must satisfy; `tol` is the solver
    /// tolerance.
    pub fn checks(&self, tol: f64) -> Vec<Check> {
        vec![
            Check::new(
                "sphere_constraint",
                self.max_sphere_defect <= 1e-12,
                format!("max ||m|-1| = {:.3e}", self.max_sphere_defect),
            ),
            Check::new(
                "tangency",
                self.max_tangency_defect <= 1e-12,
                format!("max |v·m| = {:.3e}", self.max_tangency_defect),
            ),
            Check::new(
                "residual_identity",
                self.max_relative_residual <= 100.0 * tol,
                format!("max residual/scale = {:.3e}, limit {:.1e}", self.max_relative_residual, 100.0 * tol),
            ),
            Check::new(
                "renormalization_energy",
                self.steps == 0 || self.max_renormalization_excess <= 1e-12,
                format!("max excess = {:.3e}", self.max_renormalization_excess),
            ),
        ]
    }
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct PathSummary {
    energies: Vec<f64>,
    sum_v_minus_a_sq: f64,
    sum_v_sq: f64,
    sum_grad_v_sq: f64,
    cross: Vec<f64>,
    max_sphere_defect: f64,
    max_tangency_defect: f64,
    max_renormalization_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub paths: usize,
    pub failures: Vec<PathFailure>,
    pub dt: f64,
    pub steps: usize,
    pub initial_energy: f64,
    /// Mean of `‖∇m^n‖²` for `n = 0..=N`.
    pub energy_mean: Vec<f64>,
    pub energy_variance: Vec<f64>,
    pub energy_half_width: Vec<f64>,
    /// `max_n E‖∇m^n‖²`
    pub max_mean_energy: f64,
    /// `max_n E‖∇m^n‖² / (1 + ‖∇m⁰‖²)`
    pub energy_constant: f64,
    /// `E Σ_n ‖v^n − A^n‖²`
    pub sum_v_minus_a_sq: MeanEstimate,
    /// `E Σ_n ‖v^n‖²`
    pub sum_v_sq: MeanEstimate,
    /// `E Σ_n ‖∇v^n‖²`
    pub sum_grad_v_sq: MeanEstimate,
    /// Steps whose noise terms are cross-correlated below.
    pub sampled_steps: Vec<usize>,
    /// `E (A^p, A^q)` for the sampled steps, row-major.
    pub cross_increments: Vec<Vec<MeanEstimate>>,
    pub max_sphere_defect: f64,
    pub max_tangency_defect: f64,
    /// `max (‖∇m^{n+1}‖² − ‖∇(m^n + v^n)‖²)` over all steps and paths.
    pub max_renormalization_excess: f64,
}

fn sampled_steps(steps: usize) -> Vec<usize> {
    let mut s = vec![0, steps / 2, steps.saturating_sub(1)];
    s.dedup();
    s
}

pub fn run_ensemble(
    sim: &Simulation,
    paths: usize,
    base_seed: u64,
    threads: Option<usize>,
) -> Result<EnsembleStats, Error> {
    if paths < 2 {
        return Err(Error::Invalid(format!("an ensemble needs at least 2 paths, got {paths}")));
    }
    let params = sim.params();
    let sample = sampled_steps(params.steps);
    let results = map_paths(paths, threads, |i| ensemble_path(sim, path_seed(base_seed, i as u64), &sample));
    let mut failures = Vec::new();
    let mut ok = Vec::with_capacity(paths);
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => ok.push(s),
            Err(e) => {
                failures.push(PathFailure { path: i, seed: path_seed(base_seed, i as u64), message: e.to_string() })
            }
        }
    }
    let steps = params.steps;
    let column = |f: &dyn Fn(&PathSummary) -> f64| -> Vec<f64> { ok.iter().map(f).collect() };
    let energy: Vec<MeanEstimate> =
        (0..=steps).map(|n| MeanEstimate::from_samples(&column(&|s| s.energies[n]))).collect();
    let initial_energy = sim.mesh.grad_norm_sq(sim.initial.as_slice()).max(0.0);
    let max_mean_energy = energy.iter().map(|e| e.mean).fold(f64::NEG_INFINITY, f64::max);
    let p = sample.len();
    let mut cross_increments = vec![Vec::with_capacity(p); p];
    let mut idx = 0;
    for (a, row) in cross_increments.iter_mut().enumerate() {
        for _ in 0..p {
            row.push(MeanEstimate::from_samples(&column(&|s| s.cross[idx])));
            idx += 1;
        }
        debug_assert_eq!(row.len(), p, "row {a}");
    }
    let fold_max = |f: &dyn Fn(&PathSummary) -> f64| ok.iter().map(f).fold(0.0, f64::max);
    Ok(EnsembleStats {
        paths,
        dt: params.dt(),
        steps,
        initial_energy,
        energy_mean: energy.iter().map(|e| e.mean).collect(),
        energy_variance: energy.iter().map(|e| e.variance).collect(),
        energy_half_width: energy.iter().map(|e| e.half_width).collect(),
        max_mean_energy,
        energy_constant: max_mean_energy / (1.0 + initial_energy),
        sum_v_minus_a_sq: MeanEstimate::from_samples(&column(&|s| s.sum_v_minus_a_sq)),
        sum_v_sq: MeanEstimate::from_samples(&column(&|s| s.sum_v_sq)),
        sum_grad_v_sq: MeanEstimate::from_samples(&column(&|s| s.sum_grad_v_sq)),
        sampled_steps: sample,
        cross_increments,
        max_sphere_defect: fold_max(&|s| s.max_sphere_defect),
        max_tangency_defect: fold_max(&|s| s.max_tangency_defect),
        max_renormalization_excess: ok.iter().map(|s| s.max_renormalization_excess).fold(f64::NEG_INFINITY, f64::max),
        failures,
    })
}

fn ensemble_path(sim: &Simulation, seed: u64, sample: &[usize]) -> Result<PathSummary, PathError> {
    let scheme = sim.scheme();
    let dt = scheme.dt();
    let mut rng = path_rng(seed, 0);
    let mut energies = vec![sim.mesh.grad_norm_sq(sim.initial.as_slice()).max(0.0)];
    let mut sums = [0.0; 3];
    let mut sampled_a: Vec<Vec<Vec3>> = Vec::with_capacity(sample.len());
    let mut max_sphere_defect: f64 = 0.0;
    let mut max_tangency_defect: f64 = 0.0;
    let mut max_renormalization_excess = f64::NEG_INFINITY;
    scheme.drive(
        &sim.initial,
        |n| sim.noise.sample_increment(&mut rng, dt, n),
        |_, inc, out| {
            let d = &out.diagnostics;
            energies.push(d.energy);
            sums[0] += d.norm_v_minus_a_sq;
            sums[1] += d.norm_v_sq;
            sums[2] += d.norm_grad_v_sq;
            max_sphere_defect = max_sphere_defect.max(d.sphere_defect);
            max_tangency_defect = max_tangency_defect.max(d.tangency_defect);
            max_renormalization_excess = max_renormalization_excess.max(d.energy - d.energy_pre_normalization);
            if sample.contains(&inc.step) {
                sampled_a.push(out.noise_term.clone());
            }
        },
    )?;
    let mut cross = Vec::with_capacity(sample.len() * sample.len());
    for a in &sampled_a {
        for b in &sampled_a {
            cross.push(sim.mesh.l2_inner(a, b));
        }
    }
    Ok(PathSummary {
        energies,
        sum_v_minus_a_sq: sums[0],
        sum_v_sq: sums[1],
        sum_grad_v_sq: sums[2],
        cross,
        max_sphere_defect,
        max_tangency_defect,
        max_renormalization_excess,
    })
}

impl EnsembleStats {
    pub fn energy_csv(&self) -> String {
        let mut out = String::from("step,t,energy_mean,energy_variance,energy_half_width\n");
        for n in 0..=self.steps {
            out.push_str(&format!(
                "{n},{},{},{},{}\n",
                fmt_f64(n as f64 * self.dt),
                fmt_f64(self.energy_mean[n]),
                fmt_f64(self.energy_variance[n]),
                fmt_f64(self.energy_half_width[n])
            ));
        }
        out
    }

    /// Orthogonality of distinct sampled noise terms, `E (A^p, A^q) = 0`.
    pub fn cross_increment_checks(&self) -> Vec<Check> {
        let mut checks = Vec::new();
        for (i, row) in self.cross_increments.iter().enumerate() {
            for (j, est) in row.iter().enumerate().skip(i + 1) {
                checks.push(Check::new(
                    format!("cross_increment_{}_{}", self.sampled_steps[i], self.sampled_steps[j]),
                    est.contains(0.0),
                    format!("mean {:.3e} ± {:.3e}", est.mean, est.half_width),
                ));
            }
        }
        checks
    }

    pub fn checks(&self) -> Vec<Check> {
        let mut checks = vec![
            Check::new("no_path_failures", self.failures.is_empty(), format!("{} failures", self.failures.len())),
            Check::new(
                "sphere_constraint",
                self.max_sphere_defect <= 1e-12,
                format!("max ||m|-1| = {:.3e}", self.max_sphere_defect),
            ),
            Check::new(
                "tangency",
                self.max_tangency_defect <= 1e-12,
                format!("max |v·m| = {:.3e}", self.max_tangency_defect),
            ),
            Check::new(
                "renormalization_energy",
                self.max_renormalization_excess <= 1e-12,
                format!("max excess = {:.3e}", self.max_renormalization_excess),
            ),
        ];
        checks.extend(self.cross_increment_checks());
        checks
    }
}

/// Verdicts comparing an ensemble with one at half the time step.
pub fn halving_checks(coarse: &EnsembleStats, fine: &EnsembleStats) -> Vec<Check> {
    let energy_ratio = fine.max_mean_energy / coarse.max_mean_energy;
    let drift_ratio = fine.sum_v_minus_a_sq.mean / coarse.sum_v_minus_a_sq.mean;
    vec![
        Check::new(
            "energy_bound_stable",
            coarse.max_mean_energy.is_finite() && (0.5..=2.0).contains(&energy_ratio),
            format!(
                "max_n E|∇m|² {:.6e} -> {:.6e} (ratio {energy_ratio:.4})",
                coarse.max_mean_energy, fine.max_mean_energy
            ),
        ),
        Check::new(
            "drift_square_halves",
            (0.3..=0.8).contains(&drift_ratio),
            format!(
                "E Σ|v-A|² {:.6e} -> {:.6e} (ratio {drift_ratio:.4})",
                coarse.sum_v_minus_a_sq.mean, fine.sum_v_minus_a_sq.mean
            ),
        ),
    ]
}

// ---------------------------------------------------------------------------
// Coupled Δt ladder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub paths: usize,
    pub failures: Vec<PathFailure>,
    /// Step counts `N, 2N, 4N, …`.
    pub steps: Vec<usize>,
    pub dts: Vec<f64>,
    /// `d_k = E ‖m_{Δt_k} − m_{Δt_{k+1}}‖²` in `L²([0,T]×D)`.
    pub differences: Vec<MeanEstimate>,
    /// `log₂(d_k / d_{k+1}) / 2`; reported only.
    pub orders: Vec<f64>,
    pub monotone: bool,
}

/// Brownian coefficients for every ladder level, finest last. Level `ℓ`
/// is formed from level `ℓ + 1` by summing consecutive pairs.
pub fn coupled_coefficients(fine: Vec<Vec<f64>>, levels: usize) -> Vec<Vec<Vec<f64>>> {
    let mut ladder = vec![fine];
    for _ in 1..levels {
        let finer = ladder.last().expect("nonempty");
        let coarser: Vec<Vec<f64>> =
            finer.chunks_exact(2).map(|pair| pair[0].iter().zip(&pair[1]).map(|(a, b)| a + b).collect()).collect();
        ladder.push(coarser);
    }
    ladder.reverse();
    ladder
}

fn states_for(sim: &Simulation, coefficients: &[Vec<f64>]) -> Result<Vec<MagnetizationField>, PathError> {
    let scheme = sim.scheme();
    let dt = scheme.dt();
    let mut states = Vec::with_capacity(coefficients.len());
    scheme.drive(
        &sim.initial,
        |n| sim.noise.increment_from_coefficients(coefficients[n].clone(), dt, n),
        |m, _, _| states.push(m.clone()),
    )?;
    Ok(states)
}

fn space_time_distance(mesh: &Mesh, coarse: &[MagnetizationField], fine: &[MagnetizationField], dt_fine: f64) -> f64 {
    fine.iter()
        .enumerate()
        .map(|(n, f)| {
            let c = &coarse[n / 2];
            let diff: Vec<Vec3> = c.as_slice().iter().zip(f.as_slice()).map(|(&a, &b)| sub(a, b)).collect();
            dt_fine * mesh.l2_norm_sq(&diff)
        })
        .sum()
}

pub fn run_convergence(
    sim: &Simulation,
    levels: usize,
    paths: usize,
    base_seed: u64,
    threads: Option<usize>,
) -> Result<ConvergenceReport, Error> {
    if levels < 3 {
        return Err(Error::Invalid(format!("a convergence ladder needs at least 3 levels, got {levels}")));
    }
    if paths == 0 {
        return Err(Error::Invalid("a convergence study needs at least 1 path".into()));
    }
    let base = sim.params().steps;
    let steps: Vec<usize> = (0..levels).map(|l| base << l).collect();
    let sims = steps.iter().map(|&n| sim.with_steps(n)).collect::<Result<Vec<_>, _>>()?;
    let finest = &sims[levels - 1];
    let fine_dt = finest.params().dt();
    let results = map_paths(paths, threads, |i| -> Result<Vec<f64>, PathError> {
        let mut rng = path_rng(base_seed, i as u64);
        let fine = (0..finest.params().steps)
            .map(|n| {
                finest.noise.sample_coefficients(&mut rng, fine_dt).map_err(|e| PathError { step: n, source: e.into() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let ladder = coupled_coefficients(fine, levels);
        let states = sims.iter().zip(&ladder).map(|(s, c)| states_for(s, c)).collect::<Result<Vec<_>, _>>()?;
        Ok((0..levels - 1)
            .map(|k| space_time_distance(&sim.mesh, &states[k], &states[k + 1], sims[k + 1].params().dt()))
            .collect())
    });
    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(d) => ok.push(d),
            Err(e) => {
                failures.push(PathFailure { path: i, seed: path_seed(base_seed, i as u64), message: e.to_string() })
            }
        }
    }
    let differences: Vec<MeanEstimate> =
        (0..levels - 1).map(|k| MeanEstimate::from_samples(&ok.iter().map(|d| d[k]).collect::<Vec<_>>())).collect();
    let orders = differences.windows(2).map(|w| (w[0].mean / w[1].mean).log2() / 2.0).collect();
    let monotone = failures.is_empty() && differences.windows(2).all(|w| w[1].mean < w[0].mean);
    Ok(ConvergenceReport {
        paths,
        failures,
        dts: sims.iter().map(|s| s.params().dt()).collect(),
        steps,
        differences,
        orders,
        monotone,
    })
}

impl ConvergenceReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("level,steps,dt,difference,half_width,order\n");
        for (k, d) in self.differences.iter().enumerate() {
            let order = if k == 0 { String::new() } else { fmt_f64(self.orders[k - 1]) };
            out.push_str(&format!(
                "{k},{},{},{},{},{order}\n",
                self.steps[k + 1],
                fmt_f64(self.dts[k + 1]),
                fmt_f64(d.mean),
                fmt_f64(d.half_width)
            ));
        }
        out
    }

    pub fn checks(&self) -> Vec<Check> {
        let values: Vec<String> = self.differences.iter().map(|d| format!("{:.4e}", d.mean)).collect();
        vec![Check::new("coupled_differences_decrease", self.monotone, values.join(" > "))]
    }
}

// ---------------------------------------------------------------------------
// Martingale structure
// ---------------------------------------------------------------------------

/// How noise terms are paired with states when accumulating `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// `A^n = m^n × GΔW^n`, the adapted martingale increment.
    Adapted,
    /// `m^{n+1} × GΔW^n`: uses the state after the increment. Negative control.
    Anticipating,
    /// `m^n × GΔW^{N−1−n}`: increments taken in reversed step order. Negative control.
    Reversed,
}

/// Deterministic probe fields `a_p(x) = (cos pπs, ½ + ½ cos (p+1)πs, ±¾)`,
/// `s = x₁ / L₁`.
pub fn standard_probes(mesh: &Mesh, count: usize) -> Vec<Vec<Vec3>> {
    use std::f64::consts::PI;
    let length = mesh.spec().extents[0];
    (0..count)
        .map(|p| {
            let sign = if p % 2 == 0 { 0.75 } else { -0.75 };
            (0..mesh.node_count())
                .map(|j| {
                    let s = mesh.point(j)[0] / length;
                    [(p as f64 * PI * s).cos(), 0.5 + 0.5 * ((p + 1) as f64 * PI * s).cos(), sign]
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleTest {
    pub kind: &'static str,
    pub label: String,
    pub estimate: MeanEstimate,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub paths: usize,
    pub pairing: Pairing,
    pub failures: Vec<PathFailure>,
    pub tests: Vec<MartingaleTest>,
    pub passed: bool,
}

fn time_pairs(steps: usize) -> Vec<(usize, usize)> {
    let q = steps / 4;
    let h = steps / 2;
    let mut pairs = vec![(0, q.max(1)), (q, h), (0, steps), (h, steps)];
    pairs.retain(|(a, b)| a < b);
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

fn increment_pairs(steps: usize) -> Vec<(usize, usize)> {
    let mut pairs = vec![(0, 1), (steps / 4, steps / 2), (steps / 2, steps - 1), (0, steps - 1)];
    pairs.retain(|(a, b)| a < b && *b < steps);
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

struct MartingalePath {
    /// `projections[p][n] = (X^n, a_p)`
    projections: Vec<Vec<f64>>,
    /// `compensator[k][n] = Σ_{l<n} Δt Σ_i (m^l × G_i, a)(m^l × G_i, b)` for probe pair `k`.
    compensator: Vec<Vec<f64>>,
    /// `(A^n, A^m)` for the increment pairs.
    cross: Vec<f64>,
}

fn probe_pairs(count: usize) -> Vec<(usize, usize)> {
    (0..count).flat_map(|a| (a..count).map(move |b| (a, b))).collect()
}

fn martingale_path(
    sim: &Simulation,
    seed: u64,
    probes: &[Vec<Vec3>],
    pairing: Pairing,
    inc_pairs: &[(usize, usize)],
) -> Result<MartingalePath, PathError> {
    let scheme = sim.scheme();
    let dt = scheme.dt();
    let steps = scheme.params.steps;
    let mut rng = path_rng(seed, 0);
    let mut states = Vec::with_capacity(steps + 1);
    let mut increments = Vec::with_capacity(steps);
    let last = scheme.drive(
        &sim.initial,
        |n| sim.noise.sample_increment(&mut rng, dt, n),
        |m, inc, _| {
            states.push(m.clone());
            increments.push(inc.field.clone());
        },
    )?;
    states.push(last);

    let pairs = probe_pairs(probes.len());
    let mut projections = vec![vec![0.0; steps + 1]; probes.len()];
    let mut compensator = vec![vec![0.0; steps + 1]; pairs.len()];
    let mut kept: Vec<(usize, Vec<Vec3>)> = Vec::new();
    for n in 0..steps {
        let (state, field) = match pairing {
            Pairing::Adapted => (&states[n], &increments[n]),
            Pairing::Anticipating => (&states[n + 1], &increments[n]),
            Pairing::Reversed => (&states[n], &increments[steps - 1 - n]),
        };
        let a: Vec<Vec3> = state.as_slice().iter().zip(field).map(|(&s, &g)| cross(s, g)).collect();
        for (p, probe) in probes.iter().enumerate() {
            projections[p][n + 1] = projections[p][n] + sim.mesh.l2_inner(&a, probe);
        }
        // (m × G_i, a_p) for every mode and probe.
        let weights: Vec<Vec<f64>> = sim
            .noise
            .fields()
            .iter()
            .map(|g| {
                let mg: Vec<Vec3> = state.as_slice().iter().zip(g).map(|(&s, &gj)| cross(s, gj)).collect();
                probes.iter().map(|probe| sim.mesh.l2_inner(&mg, probe)).collect()
            })
            .collect();
        for (k, &(pa, pb)) in pairs.iter().enumerate() {
            let q: f64 = weights.iter().map(|w| w[pa] * w[pb]).sum();
            compensator[k][n + 1] = compensator[k][n] + dt * q;
        }
        if inc_pairs.iter().any(|&(x, y)| x == n || y == n) {
            kept.push((n, a));
        }
    }
    let lookup = |n: usize| &kept.iter().find(|(k, _)| *k == n).expect("kept increment").1;
    let cross_values = inc_pairs.iter().map(|&(a, b)| sim.mesh.l2_inner(lookup(a), lookup(b))).collect();
    Ok(MartingalePath { projections, compensator, cross: cross_values })
}

pub fn martingale_diagnostics(
    sim: &Simulation,
    paths: usize,
    base_seed: u64,
    probes: &[Vec<Vec3>],
    pairing: Pairing,
    threads: Option<usize>,
) -> Result<MartingaleReport, Error> {
    if paths < 2 {
        return Err(Error::Invalid(format!("martingale diagnostics need at least 2 paths, got {paths}")));
    }
    let steps = sim.params().steps;
    if steps < 2 {
        return Err(Error::Invalid("martingale diagnostics need at least 2 steps".into()));
    }
    for probe in probes {
        sim.mesh.check_field(probe.len())?;
    }
    let t_pairs = time_pairs(steps);
    let inc_pairs = increment_pairs(steps);
    let results = map_paths(paths, threads, |i| {
        martingale_path(sim, path_seed(base_seed, i as u64), probes, pairing, &inc_pairs)
    });
    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => ok.push(p),
            Err(e) => {
                failures.push(PathFailure { path: i, seed: path_seed(base_seed, i as u64), message: e.to_string() })
            }
        }
    }
    let mut tests = Vec::new();
    let mut push = |kind: &'static str, label: String, values: Vec<f64>| {
        let estimate = MeanEstimate::from_samples(&values);
        tests.push(MartingaleTest { kind, label, passed: estimate.contains(0.0), estimate });
    };
    for &(n0, n1) in &t_pairs {
        for p in 0..probes.len() {
            push(
                "martingale_mean",
                format!("a{p} n={n0}..{n1}"),
                ok.iter().map(|r| r.projections[p][n1] - r.projections[p][n0]).collect(),
            );
        }
        for (k, &(a, b)) in probe_pairs(probes.len()).iter().enumerate() {
            push(
                "quadratic_variation",
                format!("a{a} a{b} n={n0}..{n1}"),
                ok.iter()
                    .map(|r| {
                        let x1 = r.projections[a][n1] * r.projections[b][n1];
                        let x0 = r.projections[a][n0] * r.projections[b][n0];
                        x1 - x0 - (r.compensator[k][n1] - r.compensator[k][n0])
                    })
                    .collect(),
            );
        }
    }
    for (k, &(n, m)) in inc_pairs.iter().enumerate() {
        push("increment_orthogonality", format!("A{n} A{m}"), ok.iter().map(|r| r.cross[k]).collect());
    }
    let passed = failures.is_empty() && tests.iter().all(|t| t.passed);
    Ok(MartingaleReport { paths, pairing, failures, tests, passed })
}

impl MartingaleReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("kind,label,mean,half_width,pass\n");
        for t in &self.tests {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                t.kind,
                t.label,
                fmt_f64(t.estimate.mean),
                fmt_f64(t.estimate.half_width),
                t.passed
            ));
        }
        out
    }

    pub fn checks(&self) -> Vec<Check> {
        let mut checks =
            vec![Check::new("no_path_failures", self.failures.is_empty(), format!("{} failures", self.failures.len()))];
        checks.extend(self.tests.iter().map(|t| {
            Check::new(
                format!("{} {}", t.kind, t.label),
                t.passed,
                format!("mean {:.3e} ± {:.3e}", t.estimate.mean, t.estimate.half_width),
            )
        }));
        checks
    }
}

// ---------------------------------------------------------------------------
// Noise covariance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeCovariance {
    pub probe: usize,
    /// Sample mean of `(GΔW, a)`.
    pub mean: f64,
    /// `3 sqrt(target / M)`
    pub mean_half_width: f64,
    pub variance: f64,
    /// `Δt Σ_i (G_i, a)²` by direct mode summation.
    pub target_variance: f64,
    /// `3 target sqrt(2 / (M − 1))`
    pub variance_half_width: f64,
    pub mean_passed: bool,
    pub variance_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseCheckReport {
    pub samples: usize,
    pub dt: f64,
    pub probes: Vec<ProbeCovariance>,
    pub passed: bool,
}

/// Samples `samples` increments at the configured time step and compares
/// the moments of `(GΔW, a)` with the covariance `Δt GG*`.
pub fn noise_check(
    sim: &Simulation,
    samples: usize,
    seed: u64,
    probes: &[Vec<Vec3>],
) -> Result<NoiseCheckReport, Error> {
    if samples < 2 {
        return Err(Error::Invalid(format!("the noise check needs at least 2 samples, got {samples}")));
    }
    for probe in probes {
        sim.mesh.check_field(probe.len())?;
    }
    let dt = sim.params().dt();
    let mut rng = path_rng(seed, 0);
    let mut values = vec![Vec::with_capacity(samples); probes.len()];
    for n in 0..samples {
        let inc = sim.noise.sample_increment(&mut rng, dt, n)?;
        for (v, probe) in values.iter_mut().zip(probes) {
            v.push(sim.mesh.l2_inner(&inc.field, probe));
        }
    }
    let m = samples as f64;
    let probes: Vec<ProbeCovariance> = values
        .iter()
        .zip(probes)
        .enumerate()
        .map(|(p, (v, probe))| {
            let est = MeanEstimate::from_samples(v);
            let target_variance = sim.noise.probe_variance(&sim.mesh, probe, dt);
            let mean_half_width = SIGMA_MULTIPLIER * (target_variance / m).sqrt();
            let variance_half_width = SIGMA_MULTIPLIER * target_variance * (2.0 / (m - 1.0)).sqrt();
            ProbeCovariance {
                probe: p,
                mean: est.mean,
                mean_half_width,
                variance: est.variance,
                target_variance,
                variance_half_width,
                mean_passed: est.mean.abs() <= mean_half_width,
                variance_passed: (est.variance - target_variance).abs() <= variance_half_width,
            }
        })
        .collect();
    let passed = probes.iter().all(|p| p.mean_passed && p.variance_passed);
    Ok(NoiseCheckReport { samples, dt, probes, passed })
}

impl NoiseCheckReport {
    pub fn csv(&self) -> String {
        let mut out = String::from(
            "probe,mean,mean_half_width,variance,target_variance,variance_half_width,mean_pass,variance_pass\n",
        );
        for p in &self.probes {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                p.probe,
                fmt_f64(p.mean),
                fmt_f64(p.mean_half_width),
                fmt_f64(p.variance),
                fmt_f64(p.target_variance),
                fmt_f64(p.variance_half_width),
                p.mean_passed,
                p.variance_passed
            ));
        }
        out
    }

    pub fn checks(&self) -> Vec<Check> {
        self.probes
            .iter()
            .flat_map(|p| {
                [
                    Check::new(
                        format!("probe{}_mean", p.probe),
                        p.mean_passed,
                        format!("{:.4e} within ±{:.4e}", p.mean, p.mean_half_width),
                    ),
                    Check::new(
                        format!("probe{}_variance", p.probe),
                        p.variance_passed,
                        format!("{:.4e} vs {:.4e} ± {:.4e}", p.variance, p.target_variance, p.variance_half_width),
                    ),
                ]
            })
            .collect()
    }
}
