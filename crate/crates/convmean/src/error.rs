//! Error type shared across the crate.

use thiserror::Error;

/// Unified error for tensor ops, model I/O, datasets and training.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/kernel shape violations (dimension mismatches, odd pool input, ...).
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed on-disk formats (weight files, PPM images, CSV).
    #[error("format error: {0}")]
    Format(String),

    /// Dataset-level problems (missing ground truth, empty folds, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Numeric failures (non-finite gradients, degenerate statistics).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for data/format problems, 3 for
    /// numeric failures (usage errors are handled before any `Error` exists).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
