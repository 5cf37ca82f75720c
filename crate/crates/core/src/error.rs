use std::path::PathBuf;

use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: need at least {needed} samples, got {got}")]
    Length { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("reference signal has zero energy")]
    ZeroReference,

    #[error("gradient contract violated: {0}")]
    Contract(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("checkpoint: bad magic bytes")]
    BadMagic,

    #[error("checkpoint: unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: file truncated")]
    Truncated,

    #[error("checkpoint: corrupt contents ({0})")]
    Corrupt(String),

    #[error("checkpoint holds predictor variant {found}, expected {expected}")]
    VariantMismatch { found: String, expected: String },

    #[error("wav: malformed header ({0})")]
    WavHeader(String),

    #[error("wav: unsupported codec ({0})")]
    WavCodec(String),

    #[error("wav: truncated sample data")]
    WavTruncated,

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("manifest {}: {msg}", path.display())]
    Manifest { path: PathBuf, msg: String },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    /// Coarse category used for process exit codes and the C ABI.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Length { .. }
            | Error::Shape(_)
            | Error::Config(_)
            | Error::Input(_)
            | Error::ZeroReference
            | Error::Contract(_) => ErrorCategory::InvalidArgument,
            Error::Numeric(_) | Error::NonFiniteLoss { .. } => ErrorCategory::Numeric,
            Error::BadMagic
            | Error::VersionMismatch { .. }
            | Error::Truncated
            | Error::Corrupt(_)
            | Error::VariantMismatch { .. }
            | Error::WavHeader(_)
            | Error::WavCodec(_)
            | Error::WavTruncated
            | Error::Manifest { .. } => ErrorCategory::Format,
            Error::MissingFile(_) | Error::Io(_) => ErrorCategory::Io,
            Error::Internal(_) => ErrorCategory::Internal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    InvalidArgument,
    Numeric,
    Format,
    Io,
    Internal,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::InvalidArgument => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::Format => 4,
            ErrorCategory::Numeric => 5,
            ErrorCategory::Internal => 70,
        }
    }
}
