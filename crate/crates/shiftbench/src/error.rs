//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A file failed to parse; `line` is 1-based (0 for whole-file problems).
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("invalid prediction set: {reason}")]
    InvalidSet { reason: String },

    /// Row-indexed invariant violation inside a prediction set.
    #[error("invalid prediction set at row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("labels required: {0}")]
    MissingLabels(String),

    #[error("logits required: {0}")]
    MissingLogits(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("all tuning trials diverged")]
    AllTrialsDiverged,

    #[error("config error: {0}")]
    Config(String),

    /// Wraps a sub-module error with the (method, shift, intensity) it occurred at.
    #[error("[{method} / {shift} / level {intensity}] {source}")]
    Pipeline {
        method: String,
        shift: String,
        intensity: u32,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_coordinate(self, method: &str, shift: &str, intensity: u32) -> Self {
        Error::Pipeline {
            method: method.to_string(),
            shift: shift.to_string(),
            intensity,
            source: Box::new(self),
        }
    }
}
