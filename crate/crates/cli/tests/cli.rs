use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sllg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sllg")).args(args).current_dir(dir).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = "[mesh]\nnodes = [17]\n[scheme]\nsteps = 32\n";

#[test]
fn missing_config_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sllg(&["run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn invalid_config_reports_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[scheme]\ntheta = 0.5\nsteps = 0\n[extra]\n");
    let out = sllg(&["run", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["scheme.theta", "(1/2, 1]", "scheme.steps", "extra"] {
        assert!(err.contains(needle), "missing {needle:?} in {err}");
    }
    let missing = sllg(&["run", "--config", "does-not-exist.toml"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn deterministic_constant_run_has_zero_energy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[mesh]\nnodes = [17]\n[scheme]\nsteps = 16\n[noise]\nmodes = 0\n[initial]\nkind = \"constant\"\nvector = [0, 0, 1]\n",
    );
    let out = sllg(&["run", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("o/trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,t,energy,norm_v_sq,norm_v_minus_A_sq,norm_grad_v_sq,residual"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 17);
    for row in rows {
        let energy: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(energy, 0.0);
    }
    let manifest = fs::read_to_string(dir.path().join("o/manifest.json")).unwrap();
    assert!(manifest.contains("\"status\": \"ok\"") && manifest.contains("\"partial\": false"));
    assert!(manifest.contains("trajectory.csv") && manifest.contains("config_hash"));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for (name, threads) in [("a", "1"), ("b", "4")] {
        let run = sllg(&["run", "--config", &cfg, "--seed", "9", "--out", &format!("run_{name}")], dir.path());
        assert_eq!(run.status.code(), Some(0));
        let ens = sllg(
            &[
                "ensemble",
                "--config",
                &cfg,
                "--seed",
                "9",
                "--paths",
                "12",
                "--threads",
                threads,
                "--out",
                &format!("ens_{name}"),
            ],
            dir.path(),
        );
        assert_eq!(ens.status.code(), Some(0), "{}", String::from_utf8_lossy(&ens.stdout));
    }
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("run_a/trajectory.csv"), read("run_b/trajectory.csv"));
    assert_eq!(read("run_a/final_state.csv"), read("run_b/final_state.csv"));
    assert_eq!(read("ens_a/ensemble_energy.csv"), read("ens_b/ensemble_energy.csv"));
    assert_eq!(read("ens_a/summary.json"), read("ens_b/summary.json"));
}

#[test]
fn noise_check_passes_with_default_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = sllg(&["noise-check", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let summary = fs::read_to_string(dir.path().join("o/summary.json")).unwrap();
    assert!(summary.contains("\"passed\": true"));
    assert!(dir.path().join("o/noise_check.csv").exists());
}

#[test]
fn failing_checks_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[mesh]\nnodes = [8]\n[scheme]\nsteps = 16\n[noise]\namplitude = 1.0\n");
    let out = sllg(&["martingale", "--config", &cfg, "--pairing", "anticipating", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let manifest = fs::read_to_string(dir.path().join("o/manifest.json")).unwrap();
    assert!(manifest.contains("check_failed"));
    let ok = sllg(&["martingale", "--config", &cfg, "--out", "p"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
}

#[test]
fn runtime_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // Valid config whose initial-state file has the wrong node count.
    fs::write(dir.path().join("m0.csv"), "node,mx,my,mz\n0,0,0,1\n1,0,0,1\n").unwrap();
    let cfg = write_config(dir.path(), "[initial]\nkind = \"file\"\npath = \"m0.csv\"\n");
    let out = sllg(&["run", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(dir.path().join("o/manifest.json")).unwrap();
    assert!(manifest.contains("runtime_error") && manifest.contains("\"partial\": true"));
    // An output directory that cannot be created is a runtime failure.
    fs::write(dir.path().join("blocker"), "").unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = sllg(&["run", "--config", &cfg, "--out", "blocker/sub"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn converge_writes_ladder_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[mesh]\nnodes = [17]\n[scheme]\nsteps = 8\n[initial]\nname = \"bump\"\n");
    let out = sllg(&["converge", "--config", &cfg, "--levels", "3", "--paths", "4", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = fs::read_to_string(dir.path().join("o/convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("level,steps,dt,difference,half_width,order"));
}
