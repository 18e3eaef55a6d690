//! Error types shared across the pipeline.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration or usage (CLI exit code 1).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or infeasible input data (CLI exit code 2).
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure such as divergence or non-convergence (CLI exit code 3).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("shape mismatch for parameter `{name}`: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// CLI exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::Parse { .. } | Error::Checkpoint(_) | Error::Io(_) | Error::Image(_) => 2,
            Error::Numeric(_) | Error::ShapeMismatch { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
