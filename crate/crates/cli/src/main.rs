//! `ldm` — scenario runner for dynamic network loading, dynamic user
//! equilibrium, and delay-operator continuity experiments.

mod runner;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use scenario::LoadedScenario;

#[derive(Parser)]
#[command(name = "ldm", about = "Network loading and dynamic user equilibrium under affine link delays", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the network under a given path flow and export curves,
    /// delays, and the monotonicity audit.
    Load(RunArgs),
    /// Solve for a route-and-departure user equilibrium.
    Due(RunArgs),
    /// Run the delay-operator continuity experiment.
    Continuity(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario JSON file; referenced files resolve relative to it.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: Cli) -> Result<()> {
    let (args, which) = match &cli.command {
        Command::Load(a) => (a, "load"),
        Command::Due(a) => (a, "due"),
        Command::Continuity(a) => (a, "continuity"),
    };
    let sc = LoadedScenario::read(&args.scenario)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create output directory `{}`", args.out.display()))?;
    let seed = args.seed.or(sc.scenario.seed).unwrap_or(0);
    match which {
        "load" => runner::run_load(&sc, &args.out),
        "due" => runner::run_due(&sc, &args.out),
        _ => runner::run_continuity(&sc, &args.out, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
