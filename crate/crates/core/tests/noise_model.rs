use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

use sllg_core::vec3::{cross, Vec3, ZERO};
use sllg_core::{build_mesh, build_noise, MagnetizationField, MeshSpec, NoiseSpec};

#[test]
fn hs_partial_sums_are_monotone_and_bounded_by_series() {
    // 1D, L = 1: scalar modes have λ_k = (kπ)², each carried in three
    // directions, so g²(1+λ)² = (1+λ_k)^(-2) for s = 2, c = 1.
    let mesh = build_mesh(&MeshSpec::interval(1.0, 64)).unwrap();
    let j_max = 3 * 64;
    let series: f64 = (0..64).map(|k| 3.0 * (1.0 + (k as f64 * PI).powi(2)).powi(-2)).sum();
    let mut previous = 0.0;
    for j in 1..=j_max {
        let noise = build_noise(&mesh, &NoiseSpec { modes: j, decay: 2.0, amplitude: 1.0 }).unwrap();
        let partial = noise.hs_norm_sq();
        assert!(partial >= previous, "J={j}");
        assert!(partial <= series * (1.0 + 1e-14), "J={j}: {partial} > {series}");
        previous = partial;
    }
    assert!((previous - series).abs() <= 1e-14 * series);
    assert!(build_noise(&mesh, &NoiseSpec { modes: j_max + 1, decay: 2.0, amplitude: 1.0 }).is_err());
}

#[test]
fn ito_correction_matches_componentwise_oracle() {
    let mesh = build_mesh(&MeshSpec::interval(1.0, 6)).unwrap();
    let noise = build_noise(&mesh, &NoiseSpec { modes: 5, decay: 0.5, amplitude: 1.3 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let m = MagnetizationField::from_normalized(
            (0..6)
                .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)])
                .collect(),
        )
        .unwrap();
        let s = noise.ito_correction(m.as_slice()).unwrap();
        let j = 3;
        let mj = m[j];
        let mut oracle = ZERO;
        for g in noise.fields() {
            let (a, b) = (mj, g[j]);
            // (m × g) × g = (m·g) g − |g|² m
            let mg = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            let gg = b[0] * b[0] + b[1] * b[1] + b[2] * b[2];
            for c in 0..3 {
                oracle[c] += mg * b[c] - gg * a[c];
            }
        }
        for c in 0..3 {
            assert!((s[j][c] - oracle[c]).abs() <= 1e-14, "{:?} vs {oracle:?}", s[j]);
        }
    }
}

#[test]
fn nodal_moments_match_covariance() {
    let mesh = build_mesh(&MeshSpec::interval(1.0, 16)).unwrap();
    let noise = build_noise(&mesh, &NoiseSpec { modes: 4, decay: 1.0, amplitude: 0.7 }).unwrap();
    let dt = 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let samples = 10_000;
    let probe: Vec<Vec3> = (0..16).map(|j| [1.0, (j as f64 * 0.3).sin(), 0.5]).collect();
    let mut sums = vec![ZERO; 16];
    let mut probe_values = Vec::with_capacity(samples);
    for n in 0..samples {
        let inc = noise.sample_increment(&mut rng, dt, n).unwrap();
        for (s, f) in sums.iter_mut().zip(&inc.field) {
            for c in 0..3 {
                s[c] += f[c];
            }
        }
        probe_values.push(mesh.l2_inner(&inc.field, &probe));
    }
    for j in 0..16 {
        for c in 0..3 {
            let spread: f64 = noise.fields().iter().map(|g| g[j][c] * g[j][c]).sum::<f64>();
            let bound = 4.0 * (dt * spread).sqrt() / 100.0;
            let mean = sums[j][c] / samples as f64;
            assert!(mean.abs() <= bound.max(1e-300) || spread == 0.0, "node {j} comp {c}: {mean} vs {bound}");
        }
    }
    let mean = probe_values.iter().sum::<f64>() / samples as f64;
    let var = probe_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples as f64 - 1.0);
    let target = noise.probe_variance(&mesh, &probe, dt);
    assert!((var / target - 1.0).abs() <= 0.1, "{var} vs {target}");
}

#[test]
fn increments_are_uncorrelated_across_steps() {
    let mesh = build_mesh(&MeshSpec::interval(1.0, 8)).unwrap();
    let noise = build_noise(&mesh, &NoiseSpec::default()).unwrap();
    let dt = 0.05;
    let probe: Vec<Vec3> = (0..8).map(|j| [1.0, 0.2 * j as f64, -0.4]).collect();
    let products: Vec<f64> = (0..10_000u64)
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(path);
            let a = noise.sample_increment(&mut rng, dt, 0).unwrap();
            let _ = noise.sample_increment(&mut rng, dt, 1).unwrap();
            let b = noise.sample_increment(&mut rng, dt, 2).unwrap();
            mesh.l2_inner(&a.field, &probe) * mesh.l2_inner(&b.field, &probe)
        })
        .collect();
    let n = products.len() as f64;
    let mean = products.iter().sum::<f64>() / n;
    let sd = (products.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() <= 3.0 * sd / n.sqrt(), "{mean} vs {}", 3.0 * sd / n.sqrt());
}

#[test]
fn noise_term_moments_scale_with_time_step() {
    let mesh = build_mesh(&MeshSpec::interval(1.0, 16)).unwrap();
    let noise = build_noise(&mesh, &NoiseSpec::default()).unwrap();
    let m = MagnetizationField::from_normalized(
        (0..16).map(|j| [(j as f64 * 0.4).cos(), (j as f64 * 0.4).sin(), 0.3]).collect(),
    )
    .unwrap();
    let samples = 10_000;
    let moments = |dt: f64, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut second, mut fourth) = (0.0, 0.0);
        for n in 0..samples {
            let inc = noise.sample_increment(&mut rng, dt, n).unwrap();
            let a: Vec<Vec3> = m.as_slice().iter().zip(&inc.field).map(|(&x, &g)| cross(x, g)).collect();
            second += mesh.l2_norm_sq(&a);
            fourth += mesh.l4_norm_pow4(&a);
        }
        (second / samples as f64, fourth / samples as f64)
    };
    let dt = 0.02;
    let (e2, e4) = moments(dt, 1);
    let (_, e4_half) = moments(dt / 2.0, 2);
    assert!(e2 <= dt * noise.l2_trace() * 1.05, "{e2} vs {}", dt * noise.l2_trace());
    let ratio = e4 / e4_half;
    assert!((ratio / 4.0 - 1.0).abs() <= 0.25, "L4 moment ratio {ratio}");
}
