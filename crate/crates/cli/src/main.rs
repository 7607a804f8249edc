//! `kep`: command-line front end for the background, Keldysh, linearised and
//! nonlinear Euler–Poisson solvers.
//!
//! Exit codes: 0 success, 1 unreadable or invalid configuration, 2 failed
//! admissibility or precondition, 3 solver divergence.

mod commands;
mod config;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Run;
use crate::config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "kep", version, about = "Transonic Euler-Poisson nozzle flow solvers")]
struct Cli {
    /// TOML configuration; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomised starts (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// One-dimensional background flow and its metadata.
    Background,
    /// Model Keldysh problem by vanishing-viscosity continuation.
    Keldysh,
    /// Background coefficients, sonic interface and multiplier ledger.
    Linearized,
    /// Nonlinear fixed-point solve for the configured boundary data.
    SolveEp,
    /// Multiplier margin sweep over J.
    Admissibility,
    /// Fast invariant suite.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Background => "background",
            Command::Keldysh => "keldysh",
            Command::Linearized => "linearized",
            Command::SolveEp => "solve-ep",
            Command::Admissibility => "admissibility",
            Command::Verify => "verify",
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<keldysh_ep::Error>() {
        Some(e) if e.is_divergence() => 3,
        _ => 2,
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let (mut cfg, base_dir) = match &cli.config {
        Some(path) => {
            let (cfg, _) = RunConfig::load(path)?;
            let dir = path.parent().map(|d| d.to_path_buf()).unwrap_or_default();
            (cfg, dir)
        }
        None => (RunConfig::default(), PathBuf::from(".")),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out = commands::out_dir(cli.out.as_deref(), &cfg);
    let run = Run { cfg, out, base_dir, subcommand: cli.command.name() };
    match cli.command {
        Command::Background => commands::background(&run),
        Command::Keldysh => commands::keldysh(&run),
        Command::Linearized => commands::linearized(&run),
        Command::SolveEp => commands::solve_ep(&run),
        Command::Admissibility => commands::admissibility(&run),
        Command::Verify => commands::verify(&run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
