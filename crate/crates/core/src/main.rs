use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use steinflow::harness::{execute, Experiment, ExperimentConfig};
use steinflow::Error;

#[derive(Parser)]
#[command(name = "steinflow", version, about = "Nonlocal SVGD mean-field experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; defaults apply when omitted
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// output directory (overrides `out` in the config)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// worker threads for concurrent sweep members
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fourier sandwich, semigroup, sigma-star and moment checks
    KernelCheck(Common),
    SimulatePde(Common),
    SimulateParticles(Common),
    /// convergence to the local limit over the sigma list
    SweepSigma(Common),
    /// fitted KL decay rates per sigma
    DecayStudy(Common),
    ParticleVsPde(Common),
    /// all diagnostics on saved field CSVs
    Diagnose {
        #[command(flatten)]
        common: Common,
        snapshots: Vec<PathBuf>,
    },
}

fn split(cmd: Command) -> (Experiment, Common, Vec<PathBuf>) {
    match cmd {
        Command::KernelCheck(c) => (Experiment::KernelCheck, c, vec![]),
        Command::SimulatePde(c) => (Experiment::SimulatePde, c, vec![]),
        Command::SimulateParticles(c) => (Experiment::SimulateParticles, c, vec![]),
        Command::SweepSigma(c) => (Experiment::SweepSigma, c, vec![]),
        Command::DecayStudy(c) => (Experiment::DecayStudy, c, vec![]),
        Command::ParticleVsPde(c) => (Experiment::ParticleVsPde, c, vec![]),
        Command::Diagnose { common, snapshots } => (Experiment::Diagnose, common, snapshots),
    }
}

fn prepare(exp: Experiment, common: &Common, snapshots: Vec<PathBuf>) -> steinflow::Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    match cfg.experiment {
        Some(e) if e != exp => {
            return Err(Error::Config(format!(
                "config is for '{}' but the subcommand is '{}'",
                e.name(),
                exp.name()
            )))
        }
        _ => cfg.experiment = Some(exp),
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.snapshots.extend(snapshots);
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(exp.name()));
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("threads: {e}")))?;
    }
    cfg.validate()?;
    Ok((cfg, out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (exp, common, snapshots) = split(cli.command);
    let (cfg, out) = match prepare(exp, &common, snapshots) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("steinflow: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(&cfg, &out) {
        Ok((outcome, manifest)) => {
            for n in &outcome.notes {
                eprintln!("note: {n}");
            }
            println!(
                "{} {} in {:.2}s -> {}",
                exp.name(),
                if outcome.passed { "passed" } else { "FAILED" },
                manifest.runtime_seconds,
                out.display()
            );
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("steinflow: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("steinflow: {e}");
            ExitCode::from(1)
        }
    }
}
