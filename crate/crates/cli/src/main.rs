use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod svg;

use config::RunConfig;
use error::{exit, CliError};

/// Denoising-autoencoder transport experiments.
#[derive(Debug, Parser)]
#[command(name = "dae-transport", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Particle trajectories under one-shot, composed or continuous DAEs.
    Trajectory(Args),
    /// Pushforward densities (1-D) or abstract (sigma1, sigma2) trajectories (2-D).
    Pushforward(Args),
    /// Run the residual checks and write a manifest.
    Verify(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// JSON run configuration; optional for `verify`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the particle and verification seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(args: &Args, required: bool) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None if required => return Err(CliError::Config("--config is required".into())),
        None => RunConfig::from_json("{}")?,
    };
    cfg.apply_overrides(args.seed, args.out.clone());
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Trajectory(a) => commands::trajectory(&load(&a, true)?),
        Command::Pushforward(a) => commands::pushforward(&load(&a, true)?),
        Command::Verify(a) => commands::verify(&load(&a, false)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG } else { exit::SUCCESS });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
