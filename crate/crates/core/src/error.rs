use std::io;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("training diverged: non-finite values in {location}")]
    Divergence { location: String },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("stream error: {0}")]
    Stream(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
