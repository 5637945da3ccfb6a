//! `dgmark`: batch driver for generating, attacking, detecting, calibrating
//! and evaluating watermarked token sequences.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("{failed} of {total} records failed")]
    Partial { failed: usize, total: usize },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Partial { .. } => 4,
        }
    }

    /// Sorts a library error by whether the user's configuration caused it.
    pub fn from_core(stage: &str, e: dgmark_core::Error) -> Self {
        use dgmark_core::Error as E;
        match e {
            E::Config(_)
            | E::InvalidKey(_)
            | E::InvalidVocabulary(_)
            | E::InvalidWindow { .. }
            | E::CalibrationInfeasible { .. } => CliError::Config(format!("{stage}: {e}")),
            other => CliError::Runtime(format!("{stage}: {other}")),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dgmark", version, about = "Decoding-order watermarking for masked-diffusion generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decode sequences for every prompt and seed.
    Generate(CommonArgs),
    /// Score token sequences against a key.
    Detect(CommonArgs),
    /// Apply the configured edit attacks to token sequences.
    Attack(CommonArgs),
    /// Turn positive/negative detection reports into rates, AUC and CSV tables.
    Eval(CommonArgs),
    /// Find a detection threshold for a target false-positive rate.
    Calibrate(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Key file (`<key_id> <hex bytes>`); overrides the config.
    #[arg(long)]
    pub key: Option<PathBuf>,
    /// Input JSONL; overrides the config.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "DGMARK_WORKERS")]
    pub workers: Option<usize>,
    /// Root seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => commands::generate(&args),
        Command::Detect(args) => commands::detect(&args),
        Command::Attack(args) => commands::attack(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Calibrate(args) => commands::calibrate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dgmark: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
