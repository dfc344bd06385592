use thiserror::Error;

/// Errors raised while parsing, planning or simulating a network.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("layer {layer}: {message}")]
    Allocation { layer: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("width overflow in {signal}: value {value} does not fit in {bits} bits")]
    WidthOverflow {
        signal: String,
        value: i64,
        bits: u32,
    },

    #[error("simulation did not finish within {0} cycles")]
    Deadlock(u64),

    #[error("fixture format: {0}")]
    Fixture(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
