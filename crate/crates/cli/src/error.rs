use std::path::Path;

use ce_vae_core::channel::ChannelError;
use ce_vae_core::eval::EvalError;
use ce_vae_core::vae::VaeError;
use thiserror::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DATA: u8 = 4;
pub const EXIT_NUMERICAL: u8 = 5;
pub const EXIT_ARM_FAILED: u8 = 6;

pub const EXIT_CODES_HELP: &str = "\
Exit codes:
  0  success
  2  usage error (bad flag, unknown name, conflicting configuration)
  3  I/O error (unreadable input, existing output without --force)
  4  malformed input file
  5  numerical failure (non-finite loss, factorization failure)
  6  one or more study arms failed (see the manifest)

Precedence: command-line flags override --config keys, which override built-in defaults.";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    ArmFailed(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::ArmFailed(_) => EXIT_ARM_FAILED,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn channel(path: &Path, e: ChannelError) -> Self {
        match e {
            ChannelError::Io(e) => Self::io(path, e),
            other => CliError::Data(format!("{}: {other}", path.display())),
        }
    }

    pub fn model(path: &Path, e: VaeError) -> Self {
        match e {
            VaeError::Io(e) => Self::io(path, e),
            other => CliError::Data(format!("{}: {other}", path.display())),
        }
    }
}

impl From<VaeError> for CliError {
    fn from(e: VaeError) -> Self {
        match e {
            VaeError::Config(_) | VaeError::DimensionMismatch { .. } => CliError::Usage(e.to_string()),
            VaeError::Io(_) => CliError::Io(e.to_string()),
            VaeError::Checkpoint(_) => CliError::Data(e.to_string()),
            VaeError::Tensor(_) | VaeError::Linalg { .. } | VaeError::NonFiniteLoss { .. } | VaeError::TrainingAborted { .. } => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Vae(v) => v.into(),
            EvalError::Io(_) => CliError::Io(e.to_string()),
            EvalError::Invalid(_) => CliError::Usage(e.to_string()),
            EvalError::Estimator { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
