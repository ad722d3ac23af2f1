use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sllg_core::experiments::{
    coupled_coefficients, martingale_diagnostics, noise_check, run_convergence, run_ensemble, standard_probes, Pairing,
};
use sllg_core::vec3::Vec3;
use sllg_core::{InitialCondition, MeshSpec, RunConfig, Simulation};

fn config(nodes: usize, steps: usize, modes: usize) -> RunConfig {
    let mut c = RunConfig { mesh: MeshSpec::interval(1.0, nodes), ..RunConfig::default() };
    c.scheme.steps = steps;
    c.noise.modes = modes;
    c
}

#[test]
fn deterministic_ensemble_has_zero_variance() {
    let sim = Simulation::new(&config(16, 32, 0)).unwrap();
    let stats = run_ensemble(&sim, 5, 0, None).unwrap();
    let single = sim.run_path(123).unwrap();
    assert!(stats.energy_variance.iter().all(|&v| v == 0.0));
    assert_eq!(stats.energy_mean, single.energies());
    assert_eq!(stats.sum_v_minus_a_sq.half_width, 0.0);
    assert!(stats.checks().iter().all(|c| c.passed), "{:?}", stats.checks());
}

#[test]
fn ensemble_means_are_self_consistent_across_sizes() {
    let sim = Simulation::new(&config(16, 32, 8)).unwrap();
    let small = run_ensemble(&sim, 16, 0, None).unwrap();
    let large = run_ensemble(&sim, 64, 1000, None).unwrap();
    for (a, b) in [
        (small.sum_v_minus_a_sq, large.sum_v_minus_a_sq),
        (small.sum_v_sq, large.sum_v_sq),
        (small.sum_grad_v_sq, large.sum_grad_v_sq),
    ] {
        assert!(a.overlaps(&b), "{a:?} vs {b:?}");
        assert!(a.variance >= 0.0 && b.variance >= 0.0);
        assert!(b.half_width < a.half_width);
    }
    assert!(small.energy_variance.iter().all(|&v| v >= 0.0));
}

#[test]
fn drift_square_is_linear_in_time_step() {
    let base = Simulation::new(&config(16, 16, 8)).unwrap();
    let points: Vec<(f64, f64)> = [16, 32, 64]
        .iter()
        .map(|&n| {
            let sim = base.with_steps(n).unwrap();
            let s = run_ensemble(&sim, 40, 0, None).unwrap();
            (sim.params().dt().ln(), s.sum_v_minus_a_sq.mean.ln())
        })
        .collect();
    let mx = points.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = points.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((0.5..=2.0).contains(&slope), "log-log slope {slope}");
}

#[test]
fn coarse_coefficients_are_pairwise_sums() {
    let sim = Simulation::new(&config(8, 8, 5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fine: Vec<Vec<f64>> = (0..32).map(|_| sim.noise.sample_coefficients(&mut rng, 0.1 / 32.0).unwrap()).collect();
    let ladder = coupled_coefficients(fine.clone(), 3);
    assert_eq!(ladder.iter().map(|l| l.len()).collect::<Vec<_>>(), vec![8, 16, 32]);
    assert_eq!(ladder[2], fine);
    for level in 0..2 {
        for (n, coarse) in ladder[level].iter().enumerate() {
            for i in 0..5 {
                let sum = ladder[level + 1][2 * n][i] + ladder[level + 1][2 * n + 1][i];
                assert!((coarse[i] - sum).abs() <= 1e-15);
            }
        }
    }
    // Level 0 equals block sums of four fine increments up to rounding.
    for (n, coarse) in ladder[0].iter().enumerate() {
        for i in 0..5 {
            let direct: f64 = fine[4 * n..4 * n + 4].iter().map(|c| c[i]).sum();
            assert!((coarse[i] - direct).abs() <= 1e-15);
        }
    }
}

#[test]
fn convergence_reports_are_reproducible_and_decrease() {
    let mut c = config(16, 8, 0);
    c.initial = InitialCondition::Profile { name: "bump".into() };
    let sim = Simulation::new(&c).unwrap();
    let a = run_convergence(&sim, 4, 1, 0, None).unwrap();
    let b = run_convergence(&sim, 4, 1, 0, Some(2)).unwrap();
    assert_eq!(a, b);
    assert!(a.monotone);
    for o in &a.orders {
        assert!((o - 1.0).abs() < 0.2, "orders {:?}", a.orders);
    }
    assert!(run_convergence(&sim, 2, 1, 0, None).is_err());
}

#[test]
fn deterministic_martingale_quantities_vanish() {
    let sim = Simulation::new(&config(8, 8, 0)).unwrap();
    let probes = standard_probes(&sim.mesh, 2);
    let r = martingale_diagnostics(&sim, 10, 0, &probes, Pairing::Adapted, None).unwrap();
    assert!(r.passed);
    assert!(r.tests.iter().all(|t| t.estimate.mean == 0.0 && t.estimate.half_width == 0.0));
}

#[test]
fn constant_probe_quadratic_variation_contains_zero() {
    let sim = Simulation::new(&config(8, 16, 8)).unwrap();
    let probe: Vec<Vec<Vec3>> = vec![vec![[0.3, -0.5, 0.8]; 8]];
    let r = martingale_diagnostics(&sim, 10_000, 500, &probe, Pairing::Adapted, None).unwrap();
    assert!(r.passed, "{}", r.csv());
    assert!(r.tests.iter().any(|t| t.kind == "quadratic_variation"));
}

#[test]
fn negative_controls_fail() {
    let mut c = config(8, 16, 8);
    c.noise.amplitude = 1.0;
    let sim = Simulation::new(&c).unwrap();
    let probes = standard_probes(&sim.mesh, 2);
    for pairing in [Pairing::Anticipating, Pairing::Reversed] {
        let r = martingale_diagnostics(&sim, 10_000, 0, &probes, pairing, None).unwrap();
        assert!(!r.passed, "{pairing:?} control passed:\n{}", r.csv());
    }
}

#[test]
fn statistical_verdicts_are_seed_independent() {
    let sim = Simulation::new(&config(8, 8, 8)).unwrap();
    let probes = standard_probes(&sim.mesh, 2);
    let paths = 400;
    let (mut agree, mut total) = (0usize, 0usize);
    for rep in 0..20u64 {
        let first =
            martingale_diagnostics(&sim, paths, 2 * rep * paths as u64, &probes, Pairing::Adapted, None).unwrap();
        let second =
            martingale_diagnostics(&sim, paths, (2 * rep + 1) * paths as u64, &probes, Pairing::Adapted, None).unwrap();
        for (a, b) in first.tests.iter().zip(&second.tests) {
            total += 1;
            agree += usize::from(a.passed == b.passed);
        }
    }
    let rate = agree as f64 / total as f64;
    assert!(rate >= 0.95, "verdict agreement {rate:.4} over {total} test pairs");
}

#[test]
fn noise_check_passes_at_default_settings() {
    let sim = Simulation::new(&config(65, 256, 8)).unwrap();
    let probes = standard_probes(&sim.mesh, 3);
    let r = noise_check(&sim, 10_000, 0, &probes).unwrap();
    assert!(r.passed, "{}", r.csv());
    let deterministic = Simulation::new(&config(16, 8, 0)).unwrap();
    let r = noise_check(&deterministic, 100, 0, &standard_probes(&deterministic.mesh, 2)).unwrap();
    assert!(r.passed && r.probes.iter().all(|p| p.variance == 0.0));
}
