mod error;
mod eval;
mod generate;
mod manifest;
mod settings;
mod study;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::{CliError, EXIT_CODES_HELP, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "ce-vae", version, about = "Channel estimation with a variational autoencoder", after_help = EXIT_CODES_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

/// Flags shared by every subcommand.
#[derive(Debug, clap::Args)]
pub struct Common {
    /// Master seed for data, noise and initialization.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// key = value file with defaults for the command's options.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads.
    #[arg(long, global = true, env = "CE_VAE_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train/val/test channel files for a scenario preset.
    Generate(generate::GenerateArgs),
    /// Train a model and write a checkpoint plus its per-epoch history.
    Train(train::TrainArgs),
    /// Evaluate estimators over an SNR grid and write one CSV.
    Eval(eval::EvalArgs),
    /// Run a training-size, pre-train/fine-tune or cross-scenario study.
    Study(study::StudyArgs),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    match &cli.command {
        Command::Generate(a) => generate::run(a, &cli.common),
        Command::Train(a) => train::run(a, &cli.common),
        Command::Eval(a) => eval::run(a, &cli.common),
        Command::Study(a) => study::run(a, &cli.common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
