use thiserror::Error;

/// Errors surfaced by any stage of the pipeline.
#[derive(Error, Debug)]
pub enum Error {
    /// Shape or dimension mismatch between tensors or layer contracts.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input file or record.
    #[error("format error: {0}")]
    Format(String),

    /// Operation called out of order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),

    /// Degenerate data that the operation cannot handle.
    #[error("data error: {0}")]
    Data(String),

    /// Numeric failure (NaN/Inf loss, divergence).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
