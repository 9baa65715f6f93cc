use std::path::{Path, PathBuf};

use netrack_core::{Error as CoreError, TrackerMode};
use thiserror::Error;

/// Errors of the command-line layer.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("mode {0} needs --weights")]
    MissingWeights(TrackerMode),
    #[error("{path}: {reason}")]
    SchemaMismatch { path: PathBuf, reason: String },
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn schema(path: &Path, reason: impl Into<String>) -> Self {
        CliError::SchemaMismatch {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }

    /// Process exit code: 2 configuration or usage, 3 data, 4 numerics.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingWeights(_) | CliError::Usage(_) => 2,
            CliError::SchemaMismatch { .. } | CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                CoreError::ConfigInvalid { .. } => 2,
                CoreError::NotPositiveDefinite
                | CoreError::EmptyWeights
                | CoreError::DegenerateProblem
                | CoreError::DegenerateWeights
                | CoreError::NonFiniteLoss { .. } => 4,
                CoreError::DimensionMismatch { .. }
                | CoreError::TooLarge { .. }
                | CoreError::FormatVersionMismatch(_)
                | CoreError::ShapeMismatch { .. }
                | CoreError::Io(_) => 3,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
