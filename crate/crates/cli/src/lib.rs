//! Experiment harness: configuration, training runs, gradient and Taylor
//! checks, and multi-seed comparison tables.

pub mod config;
pub mod report;
pub mod train;
pub mod verify;

use std::path::PathBuf;

pub use config::{ExperimentConfig, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] mltp_core::Error),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    /// Process exit status: 2 for bad input or configuration, 3 for numeric
    /// failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use mltp_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Core(E::NonFinite(_) | E::Oracle(_)) => 3,
            CliError::Core(E::Shape { .. } | E::Precision { .. } | E::InvalidArgument(_) | E::Ingest(_)) => 2,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }
}
