//! `wmlab` — batch front door for the wave-map laboratory: evolution,
//! stabilization, control synthesis, end-to-end steering, trajectory
//! diagnostics, and parameter sweeps, each as a subcommand that reads one
//! declarative config and writes reproducible artifacts plus a manifest.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;
use config::Config;
use output::RunDir;

/// Wave maps on the circle: damping, control, stabilization experiments.
#[derive(Parser)]
#[command(name = "wmlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Run configuration: `key = value` sections; flags override keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (default: $WMLAB_OUT, else ./wmlab-out).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// RNG seed for data synthesis (sets data.seed). Seeds are always
    /// explicit; nothing is derived from the clock.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Grid size (sets grid.n).
    #[arg(long, global = true)]
    n: Option<u64>,
    /// Target sphere dimension (sets grid.k).
    #[arg(long, global = true)]
    k: Option<u64>,
    /// CFL number for whatever solver the subcommand runs (sets cfl).
    #[arg(long, global = true)]
    cfl: Option<f64>,
    /// Evolution end time (sets evolve.t_end).
    #[arg(long = "t-end", global = true)]
    t_end: Option<f64>,
    /// Override any config key as section.key=value. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evolve initial data (free, damped, or forced) and record the run.
    Simulate,
    /// Damp initial data down to a small-energy state and fit the decay rate.
    Stabilize,
    /// Synthesize a minimal-norm linear control and replay it.
    Hum,
    /// Exact steering between nearby states via the correction loop.
    ControlLocal,
    /// Full below-threshold steering pipeline between arbitrary states.
    ControlGlobal,
    /// Evaluate stored-trajectory functionals (energy ledgers, averages).
    Diagnose,
    /// Sweep families of runs (decay thresholds, concentration scales).
    Scan,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::from_file(path)?,
        None => Config::default(),
    };
    if let Some(v) = cli.seed {
        cfg.set("data.seed", (v as i64).into());
    }
    if let Some(v) = cli.n {
        cfg.set("grid.n", (v as i64).into());
    }
    if let Some(v) = cli.k {
        cfg.set("grid.k", (v as i64).into());
    }
    if let Some(v) = cli.cfl {
        cfg.set("cfl", v.into());
    }
    if let Some(v) = cli.t_end {
        cfg.set("evolve.t_end", v.into());
    }
    for spec in &cli.overrides {
        cfg.apply_override(spec)?;
    }

    let root = cli
        .out
        .or_else(|| std::env::var_os("WMLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("wmlab-out"));
    let out = RunDir::create(root)?;

    match cli.command {
        Cmd::Simulate => commands::simulate(&cfg, out),
        Cmd::Stabilize => commands::stabilize(&cfg, out),
        Cmd::Hum => commands::hum(&cfg, out),
        Cmd::ControlLocal => commands::control_local(&cfg, out),
        Cmd::ControlGlobal => commands::control_global(&cfg, out),
        Cmd::Diagnose => commands::diagnose(&cfg, out),
        Cmd::Scan => commands::scan(&cfg, out),
    }
}
