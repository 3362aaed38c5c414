use std::path::PathBuf;

/// Broad failure class, used by callers (the CLI in particular) to pick an
/// exit path without matching on every variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// The request itself was malformed: bad arguments, impossible
    /// configuration, unusable board geometry.
    Config,
    /// Inputs could not be read or did not hold together: IO, format,
    /// manifest, or cross-file alignment problems.
    Data,
    /// The computation degenerated: non-finite values, failed factorizations.
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A binary tensor file did not match the on-disk format.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A tensor file ended before its header-declared payload.
    #[error("truncated tensor in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    /// A JSON manifest parsed but described an invalid or inconsistent dataset.
    #[error("manifest error in {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    /// Two inputs that must describe the same stimuli/conditions do not.
    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Sequences shorter than the required context window.
    #[error("insufficient context: need at least {required} frames, got {available}")]
    InsufficientContext { required: usize, available: usize },

    /// Stimulus generation could not satisfy its own invariants
    /// (e.g. a trajectory that never reaches the paddle plane).
    #[error("generation failed: {0}")]
    Generation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidArgument(_) => ErrorCategory::Config,
            Error::Io { .. }
            | Error::Format { .. }
            | Error::Truncated { .. }
            | Error::Manifest { .. }
            | Error::Misaligned(_)
            | Error::DimensionMismatch(_)
            | Error::Empty(_)
            | Error::InsufficientContext { .. }
            | Error::Generation(_) => ErrorCategory::Data,
            Error::Numerical(_) => ErrorCategory::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
