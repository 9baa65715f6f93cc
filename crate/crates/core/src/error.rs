use thiserror::Error;

/// Errors raised by the tracking engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (even after diagonal jitter)")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("all resampling weights are zero")]
    EmptyWeights,
    #[error("association problem too large for enumeration ({objects} objects, {measurements} measurements)")]
    TooLarge { objects: usize, measurements: usize },
    #[error("association problem has zero total mass")]
    DegenerateProblem,
    #[error("particle weights underflowed")]
    DegenerateWeights,
    #[error("invalid configuration: {field}: {reason}")]
    ConfigInvalid { field: String, reason: String },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("weights format version mismatch: {0}")]
    FormatVersionMismatch(String),
    #[error("tensor shape mismatch for {name}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
