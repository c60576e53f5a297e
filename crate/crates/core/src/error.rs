use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the pipeline.
///
/// The variants are coarse on purpose: the CLI maps them onto exit codes
/// (see [`Error::exit_code`]) and the message carries the detail.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("PNG error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("invalid JSON in {path}: {message}")]
    Json { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("label value {value} out of range for {domain} map (max {max})")]
    LabelOutOfRange {
        domain: &'static str,
        value: u8,
        max: u8,
    },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("empty result: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Json {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// Process exit code: 2 for I/O and validation, 3 for training failure,
    /// 4 when the pipeline found nothing to measure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Training(_) => 3,
            Error::Empty(_) => 4,
            _ => 2,
        }
    }
}
