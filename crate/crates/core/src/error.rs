use std::io;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range (valid: 0..={max})")]
    Index { index: usize, max: usize },

    #[error("group size must be at least 2, got {0}")]
    GroupSize(usize),

    #[error("task generation failed: {0}")]
    Generation(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 configuration, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::GroupSize(_) | Error::Generation(_) | Error::EmptyInput(_) => 2,
            Error::Numeric(_) | Error::Shape(_) | Error::Index { .. } => 3,
            Error::Io(_) | Error::Json(_) | Error::CorruptCheckpoint(_) => 4,
        }
    }
}
