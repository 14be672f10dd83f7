//! Command-line front end. Every subcommand reads a TOML run config, writes
//! a run ledger, and exits with 0 (success), 2 (config error), 3 (runtime
//! failure), or 4 (a requested verdict failed).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use chemotax::harness::{
    emit_plotdata, execute, load_config, ExperimentKind, EXIT_CONFIG, EXIT_RUNTIME,
};
use chemotax::{Error, Result};

#[derive(Parser)]
#[command(
    name = "chemotax",
    version,
    about = "Chemotaxis lab: thresholds, trajectories, periodic/steady/entire solutions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the closed-form thresholds and verdicts for a parameter point.
    CheckThresholds(RunArgs),
    /// Integrate one trajectory and record diagnostics, envelopes, and floors.
    Simulate(RunArgs),
    /// Damped Picard iteration for a time-periodic orbit.
    Periodic(RunArgs),
    /// Pseudo-time relaxation to a steady state, optionally cross-checked.
    Steady(RunArgs),
    /// Pullback construction of an entire (all-time) solution.
    Entire(RunArgs),
    /// Parameter grid sweep with per-point verdicts and persistence floors.
    Sweep(RunArgs),
    /// Re-emit plot-ready CSV columns from a finished run ledger.
    EmitPlotdata(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps (default: one per core).
    #[arg(long)]
    parallelism: Option<usize>,
}

fn run(args: &RunArgs, kind: ExperimentKind) -> Result<i32> {
    let mut cfg = load_config(&args.config)?;
    if let Some(out) = &args.out {
        cfg.run.out_dir = out.display().to_string();
    }
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    // Relative paths inside the config (initial data files) resolve against
    // the config's own directory.
    let base = args
        .config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    execute(&cfg, kind, args.parallelism, &base)
}

#[derive(Args)]
struct PlotArgs {
    /// Run directory holding manifest.json.
    #[arg(long)]
    ledger: PathBuf,
    /// One of: envelope, persistence, region.
    #[arg(long)]
    kind: String,
    /// Output directory (default: the ledger directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::CheckThresholds(a) => run(a, ExperimentKind::Thresholds),
        Command::Simulate(a) => run(a, ExperimentKind::Simulate),
        Command::Periodic(a) => run(a, ExperimentKind::Periodic),
        Command::Steady(a) => run(a, ExperimentKind::Steady),
        Command::Entire(a) => run(a, ExperimentKind::Entire),
        Command::Sweep(a) => run(a, ExperimentKind::Sweep),
        Command::EmitPlotdata(a) => emit_plotdata(&a.ledger, &a.kind, a.out.as_deref()),
    };
    let code = match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            }
        }
    };
    std::process::exit(code);
}
