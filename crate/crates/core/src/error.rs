//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or layer dimension does not line up; `axis` names the
    /// offending axis.
    #[error("dimension error on {axis}: {message}")]
    Dimension { axis: &'static str, message: String },

    /// A binary or text container failed to parse; `offset` is the byte
    /// position at which the problem was detected.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API was called with inconsistent arguments (stale cache, missing
    /// classifier output, label out of range).
    #[error("usage error: {0}")]
    Usage(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    /// A synthetic sample could not be generated.
    #[error("generation error: {0}")]
    Generation(String),

    /// The glyph pool cannot cover a requested class.
    #[error("capacity error for class {class}: {message}")]
    Capacity { class: String, message: String },

    /// Invalid configuration, rejected before any work is done.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dimension(axis: &'static str, message: impl Into<String>) -> Self {
        Error::Dimension {
            axis,
            message: message.into(),
        }
    }

    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
