//! `lsl`: forward modeling, reduced models, inversion, embedding and
//! internal-field dumps driven by a JSON configuration.
//!
//! Exit codes: 0 on success, 1 when a numerical stage fails, 2 for usage
//! or configuration errors. Outputs are written only after every stage of
//! a command has succeeded.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Numerical(#[from] lsl_core::LslError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lsl", version, about = "Lippmann-Schwinger-Lanczos inversion for 1D lossy media")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides `output_dir` from the configuration.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Overrides the noise seed (requires a noise level in the configuration).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a frequency sweep and the spectral data of a medium.
    Forward(Common),
    /// Build a truncated-measure or adaptive reduced model and its tridiagonal form.
    Rom(Common),
    /// Recover loss and potential with the LSL or Born linearization.
    Invert(Common),
    /// Finite-difference embedding of a tridiagonal dump.
    Embed(Common),
    /// Dump LSL, Born and directly computed internal fields.
    InternalFields(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (common, which) = match &cli.command {
        Command::Forward(c) => (c, commands::Which::Forward),
        Command::Rom(c) => (c, commands::Which::Rom),
        Command::Invert(c) => (c, commands::Which::Invert),
        Command::Embed(c) => (c, commands::Which::Embed),
        Command::InternalFields(c) => (c, commands::Which::InternalFields),
    };
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", common.config.display())))?;
    let base = common.config.parent().map(PathBuf::from).unwrap_or_default();
    let mut cfg = config::RunConfig::from_json(&text, &base)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        match &mut cfg.noise {
            Some(n) => n.seed = seed,
            None => return Err(CliError::Config("--seed needs a noise level in the configuration".into())),
        }
    }
    let staged = commands::execute(which, &cfg)?;
    manifest::commit(which.name(), &text, &cfg, staged)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
