use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shelab::experiments::{self, ExperimentConfig, RunManifest};
use shelab::verify::{run_suite, SuiteReport, VerifyOptions};
use shelab::Error;

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Ensemble size; overrides the config.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "SHELAB_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an ensemble and write trajectories, hit tables and a manifest.
    Simulate,
    /// Cutoff-hit statistics per exponent and level on paired seeds.
    SweepGamma {
        /// Comma-separated exponents; overrides the config.
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        /// Comma-separated levels; overrides the config.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
    },
    /// Mass functional diagnostics on an ensemble.
    MartingaleCheck,
    /// Brownian first passage against the gambler's-ruin oracle.
    Ruin,
    /// Scaling map consistency and distribution checks.
    ScalingCheck,
    /// Split system against the direct solver.
    Splitting,
    /// Galton–Watson sweep.
    Gw,
    /// Run a verification suite: jensen, ruin, scaling, splitting, gw, mild or all.
    Verify {
        suite: String,
        /// Swap in a known-wrong ingredient; affected checks must fail.
        #[arg(long)]
        negative_control: bool,
        /// Print the JSON verdict instead of the summary.
        #[arg(long)]
        json: bool,
    },
}

/// Numerical experiments for the stochastic heat equation with superlinear
/// multiplicative noise.
#[derive(Parser)]
#[command(name = "shelab", version)]
struct Full {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

enum Failure {
    Usage(String),
    Verification,
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::NumericalFailure { .. } => Failure::Runtime(e.to_string()),
            Error::Config(m) => Failure::Usage(m),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = c.paths {
        if n == 0 {
            return Err(Failure::Usage("--paths must be at least 1".into()));
        }
        cfg.paths = n;
    }
    Ok(cfg)
}

fn report(m: &RunManifest, out: &Path) -> Result<(), Failure> {
    println!(
        "{}: {} outputs in {} ({:.2} s)",
        m.command,
        m.outputs.len(),
        out.display(),
        m.wall_clock_seconds
    );
    match m.passed {
        Some(false) => {
            println!("FAIL");
            Err(Failure::Verification)
        }
        Some(true) => {
            println!("PASS");
            Ok(())
        }
        None => Ok(()),
    }
}

fn print_suites(reports: &[SuiteReport]) {
    for r in reports {
        println!("[{}] {:.1} s", r.suite, r.elapsed_seconds);
        for c in &r.checks {
            let tag = match (c.asserted, c.passed) {
                (false, _) => "INFO",
                (true, true) => "PASS",
                (true, false) => "FAIL",
            };
            println!("  {tag} {}: {}", c.name, c.summary);
        }
    }
}

fn run(cli: Full) -> Result<(), Failure> {
    let c = &cli.common;
    if let Some(t) = c.threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let out = |name: &str| c.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(name));
    match &cli.command {
        Command::Verify {
            suite,
            negative_control,
            json,
        } => {
            let opts = VerifyOptions {
                seed: c.seed.unwrap_or(VerifyOptions::default().seed),
                negative_control: *negative_control,
                paths: c.paths,
            };
            let reports = run_suite(suite, &opts)?;
            let verdict = serde_json::to_string_pretty(&reports).map_err(|e| Failure::Runtime(e.to_string()))?;
            if let Some(dir) = &c.out {
                std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(e.to_string()))?;
                std::fs::write(dir.join(format!("verify_{suite}.json")), &verdict)
                    .map_err(|e| Failure::Runtime(e.to_string()))?;
            }
            if *json {
                println!("{verdict}");
            } else {
                print_suites(&reports);
            }
            if reports.iter().all(SuiteReport::passed) {
                Ok(())
            } else {
                Err(Failure::Verification)
            }
        }
        Command::SweepGamma { gammas, levels } => {
            let mut cfg = load_config(c)?;
            if let Some(g) = gammas {
                cfg.sweep.gammas = g.clone();
            }
            if let Some(l) = levels {
                cfg.sweep.levels = Some(l.clone());
            }
            let dir = out("sweep-gamma");
            report(&experiments::cmd_sweep_gamma(&cfg, &dir)?, &dir)
        }
        cmd => {
            let cfg = load_config(c)?;
            let (name, f): (&str, fn(&ExperimentConfig, &Path) -> shelab::Result<RunManifest>) = match cmd {
                Command::Simulate => ("simulate", experiments::cmd_simulate),
                Command::MartingaleCheck => ("martingale-check", experiments::cmd_martingale_check),
                Command::Ruin => ("ruin", experiments::cmd_ruin),
                Command::ScalingCheck => ("scaling-check", experiments::cmd_scaling_check),
                Command::Splitting => ("splitting", experiments::cmd_splitting),
                Command::Gw => ("gw", experiments::cmd_gw),
                Command::Verify { .. } | Command::SweepGamma { .. } => unreachable!(),
            };
            let dir = out(name);
            report(&f(&cfg, &dir)?, &dir)
        }
    }
}

fn main() -> ExitCode {
    match run(Full::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
