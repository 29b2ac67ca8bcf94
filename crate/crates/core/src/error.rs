use std::path::PathBuf;

/// Errors produced anywhere in the planning toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate weights: every log-weight is -inf")]
    DegenerateWeights,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no free space after {0} rejected samples")]
    NoFreeSpace(usize),

    #[error("oracle too weak: kept {kept} of {attempts} attempts (target {target})")]
    OracleTooWeak {
        kept: usize,
        attempts: usize,
        target: usize,
    },

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("failed to load library {path}: {reason}")]
    Load { path: PathBuf, reason: LoadError },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Why a library file was rejected.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LoadError {
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch")]
    Checksum,
    #[error("system mismatch: file holds {found}, requested {requested}")]
    SystemMismatch { found: String, requested: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("malformed file: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
