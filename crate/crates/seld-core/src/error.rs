//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SeldError>;

#[derive(Error, Debug)]
pub enum SeldError {
    /// Tensor dimension / shape violations.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed files (wav, csv, checkpoint, cache).
    #[error("format error: {0}")]
    Format(String),

    /// Contract violations (e.g. backward on a non-scalar).
    #[error("contract error: {0}")]
    Contract(String),

    /// Training diverged (non-finite values persisted past the retry budget).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SeldError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SeldError::Io { path: path.into(), source }
    }

    /// Stable process exit code per failure class.
    pub fn exit_code(&self) -> i32 {
        1
    }
}
