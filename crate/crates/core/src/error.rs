use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's shape or size contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("schema version mismatch in {what}: found {found}, expected {expected}")]
    SchemaVersion {
        what: String,
        found: u32,
        expected: u32,
    },

    #[error("{what}: line {line}: {message}")]
    Parse {
        what: String,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Data(String),

    /// Training diverged.
    #[error("numerical failure at epoch {epoch}: {message}")]
    Numerical { epoch: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or incompatible input files.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::SchemaVersion { .. }
                | Error::Parse { .. }
                | Error::Data(_)
                | Error::Io { .. }
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
