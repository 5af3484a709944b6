use std::path::PathBuf;

use thiserror::Error;

/// Process exit statuses.
pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_NOT_CONVERGED: u8 = 2;
pub const EXIT_IO: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Scenario {
        path: PathBuf,
        #[source]
        source: amswarm_core::Error,
    },
    #[error(transparent)]
    Core(#[from] amswarm_core::Error),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use amswarm_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Scenario { .. } => EXIT_INVALID,
            CliError::Core(E::Io(_) | E::CacheFormat(_)) => EXIT_IO,
            CliError::Core(_) => EXIT_INVALID,
            CliError::File { .. } | CliError::Io(_) | CliError::Csv(_) | CliError::Json(_) => EXIT_IO,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
