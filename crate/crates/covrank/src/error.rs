//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible matrix or vector dimensions.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// An argument violates a precondition.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Malformed input data (parse failures, ragged rows, non-finite cells).
    #[error("data error: {0}")]
    Data(String),

    /// A numerical routine could not produce a usable result
    /// (singular system, failed factorization, non-finite values).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
