//! Crate-wide error type.

/// Errors surfaced by tensor ops, model construction, IO and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or dimension mismatch in a tensor operation.
    #[error("shape error: {0}")]
    Shape(String),
    /// Invalid or inconsistent configuration values.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed binary dataset or checkpoint payload; `offset` is the byte
    /// position where the problem was detected.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },
    /// A parameter, gradient or loss became NaN/Inf.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn format(offset: u64, reason: impl Into<String>) -> Self {
        Error::Format { offset, reason: reason.into() }
    }
}
