//! CLI error type and its mapping to process exit codes.

use std::path::PathBuf;

use thiserror::Error;

/// Exit code for configuration and usage problems.
pub const EXIT_INVALID: i32 = 2;
/// Exit code when a run diverged (outputs are still written).
pub const EXIT_DIVERGED: i32 = 3;
/// Exit code for I/O failures and engine errors other than bad parameters.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown experiment '{0}' (see `fedcluster list`)")]
    UnknownExperiment(String),

    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("cannot read {path}: {source}")]
    ReadConfig {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot parse {path}: {message}")]
    ParseConfig { path: PathBuf, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Engine(#[from] fedcluster_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use fedcluster_core::Error as E;
        match self {
            CliError::UnknownExperiment(_)
            | CliError::Invalid(_)
            | CliError::ReadConfig { .. }
            | CliError::ParseConfig { .. } => EXIT_INVALID,
            CliError::Engine(E::InvalidParameter(_) | E::Config(_) | E::DimensionMismatch { .. } | E::Empty(_)) => {
                EXIT_INVALID
            }
            CliError::Engine(E::Diverged { .. }) => EXIT_DIVERGED,
            _ => EXIT_FAILURE,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
