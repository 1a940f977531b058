use thiserror::Error;

/// Errors produced by tensor construction, linear algebra, solving, and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("mode {mode} out of range for an order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("relative error undefined: reference tensor has zero norm")]
    ZeroNormReference,
    #[error("singular value decomposition did not converge")]
    SvdFailed,
    #[error("eigenvalue decomposition did not converge")]
    EigFailed,
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("malformed {format} file: {reason}")]
    MalformedFile {
        format: &'static str,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
