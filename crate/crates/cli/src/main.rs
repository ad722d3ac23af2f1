//! `sllg`: command-line driver for single runs, ensembles, Δt ladders and
//! the statistical checks.
//!
//! Exit codes: 0 success, 1 a check failed, 2 configuration error,
//! 3 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sllg_core::experiments::{
    halving_checks, martingale_diagnostics, noise_check, run_convergence, run_ensemble, standard_probes, Check,
    Pairing, PathReport, Summary,
};
use sllg_core::io::{self, Manifest};
use sllg_core::{parse_config, Error, RunConfig, Simulation};

#[derive(Parser)]
#[command(name = "sllg", version, about = "Tangent-plane scheme for the stochastic LLG equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Seed; defaults to `mc.base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for multi-path commands (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one path and write its trajectory.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo ensemble statistics.
    Ensemble {
        #[command(flatten)]
        common: Common,
        /// Number of paths; defaults to `mc.paths`.
        #[arg(long)]
        paths: Option<usize>,
        /// Also run at half the time step and compare.
        #[arg(long)]
        halving: bool,
    },
    /// Coupled Δt ladder with shared Brownian paths.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        levels: usize,
        /// Number of paths; defaults to `mc.paths`.
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Sample increments and compare their moments with Δt·GG*.
    NoiseCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 3)]
        probes: usize,
    },
    /// Increment orthogonality and quadratic-variation tests.
    Martingale {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 2)]
        probes: usize,
        #[arg(long, value_enum, default_value_t = PairingArg::Adapted)]
        pairing: PairingArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PairingArg {
    Adapted,
    Anticipating,
    Reversed,
}

impl From<PairingArg> for Pairing {
    fn from(p: PairingArg) -> Self {
        match p {
            PairingArg::Adapted => Pairing::Adapted,
            PairingArg::Anticipating => Pairing::Anticipating,
            PairingArg::Reversed => Pairing::Reversed,
        }
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<io::IoError> for Failure {
    fn from(e: io::IoError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Files written so far, relative to the output directory.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        io::write_text(&self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn summary(&mut self, json: Result<String, io::IoError>, passed: bool) -> Result<bool, Failure> {
        self.write("summary.json", &json?)?;
        Ok(passed)
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Failure::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Run { common } => ("run", common),
        Command::Ensemble { common, .. } => ("ensemble", common),
        Command::Converge { common, .. } => ("converge", common),
        Command::NoiseCheck { common, .. } => ("noise-check", common),
        Command::Martingale { common, .. } => ("martingale", common),
    };
    let mut config = match load_config(&common.config) {
        Ok(c) => c,
        Err(f) => return report_early(f),
    };
    if let Some(seed) = common.seed {
        config.mc.base_seed = seed;
    }
    if let Some(out) = &common.out {
        config.output.dir = out.clone();
    }
    match &cli.command {
        Command::Ensemble { paths: Some(p), .. } | Command::Converge { paths: Some(p), .. } => config.mc.paths = *p,
        _ => {}
    }
    let mut manifest = Manifest::new(name, config.semantic_hash(), config.mc.base_seed);
    let mut out = Output { dir: config.output.dir.clone(), files: Vec::new() };
    let result = out.write("config.toml", &config.to_toml()).and_then(|()| execute(&cli.command, &config, &mut out));
    let code = match &result {
        Ok(true) => 0,
        Ok(false) => {
            manifest.status = "check_failed".into();
            1
        }
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            manifest.status = "config_error".into();
            manifest.partial = true;
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("runtime failure: {msg}");
            manifest.status = "runtime_error".into();
            manifest.partial = true;
            3
        }
    };
    manifest.files = out.files.clone();
    if let Err(e) = io::write_json(&out.dir.join("manifest.json"), &manifest, "manifest") {
        eprintln!("runtime failure: {e}");
        return ExitCode::from(3);
    }
    ExitCode::from(code)
}

fn report_early(f: Failure) -> ExitCode {
    match f {
        Failure::Config(msg) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Failure::Runtime(msg) => {
            eprintln!("runtime failure: {msg}");
            ExitCode::from(3)
        }
    }
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        println!("{:<40} {} {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
    }
}

fn execute(command: &Command, config: &RunConfig, out: &mut Output) -> Result<bool, Failure> {
    let sim = Simulation::new(config)?;
    let seed = config.mc.base_seed;
    match command {
        Command::Run { .. } => {
            let t = sim.run_path(seed).map_err(Error::from)?;
            out.write("trajectory.csv", &io::trajectory_csv(&t))?;
            out.write("final_state.csv", &io::field_csv(t.final_state.as_slice()))?;
            if config.output.vtk {
                for s in &t.snapshots {
                    let vtk = io::vtk_snapshot(&sim.mesh, s.m.as_slice(), &s.martingale, s.time);
                    out.write(&format!("snapshots/step_{:06}.vtk", s.step), &vtk)?;
                }
            }
            let report = PathReport::new(&t);
            let checks = report.checks(config.solver.tol);
            print_checks(&checks);
            {
                let summary = Summary::new("run", checks, report);
                out.summary(summary.to_json(), summary.passed)
            }
        }
        Command::Ensemble { halving, common, .. } => {
            let stats = run_ensemble(&sim, config.mc.paths, seed, common.threads)?;
            out.write("ensemble_energy.csv", &stats.energy_csv())?;
            let mut checks = stats.checks();
            let mut reports = vec![stats];
            if *halving {
                let fine_sim = sim.with_steps(2 * config.scheme.steps)?;
                let fine = run_ensemble(&fine_sim, config.mc.paths, seed, common.threads)?;
                out.write("ensemble_energy_half_dt.csv", &fine.energy_csv())?;
                checks.extend(fine.checks().into_iter().map(|mut c| {
                    c.name = format!("half_dt_{}", c.name);
                    c
                }));
                checks.extend(halving_checks(&reports[0], &fine));
                reports.push(fine);
            }
            print_checks(&checks);
            {
                let summary = Summary::new("ensemble", checks, reports);
                out.summary(summary.to_json(), summary.passed)
            }
        }
        Command::Converge { levels, common, .. } => {
            let report = run_convergence(&sim, *levels, config.mc.paths, seed, common.threads)?;
            out.write("convergence.csv", &report.csv())?;
            let checks = report.checks();
            print_checks(&checks);
            for (k, o) in report.orders.iter().enumerate() {
                println!("empirical order from d{k}/d{}: {o:.3}", k + 1);
            }
            {
                let summary = Summary::new("converge", checks, report);
                out.summary(summary.to_json(), summary.passed)
            }
        }
        Command::NoiseCheck { samples, probes, .. } => {
            let probes = standard_probes(&sim.mesh, *probes);
            let report = noise_check(&sim, *samples, seed, &probes)?;
            out.write("noise_check.csv", &report.csv())?;
            let checks = report.checks();
            print_checks(&checks);
            {
                let summary = Summary::new("noise-check", checks, report);
                out.summary(summary.to_json(), summary.passed)
            }
        }
        Command::Martingale { paths, probes, pairing, common } => {
            let probes = standard_probes(&sim.mesh, *probes);
            let report = martingale_diagnostics(&sim, *paths, seed, &probes, (*pairing).into(), common.threads)?;
            out.write("martingale.csv", &report.csv())?;
            let checks = report.checks();
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} of {} martingale tests pass", checks.len() - failed, checks.len());
            print_checks(&checks.iter().filter(|c| !c.passed).cloned().collect::<Vec<_>>());
            {
                let summary = Summary::new("martingale", checks, report);
                out.summary(summary.to_json(), summary.passed)
            }
        }
    }
}
