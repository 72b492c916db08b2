//! Crate-wide error type.
//!
//! Variants map onto the CLI exit-code contract: configuration/input/state
//! errors exit 2, model-file errors exit 3, numeric aborts exit 4.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Invalid configuration (bad shapes, bad distributions, unknown keys).
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid runtime input (e.g. a message index out of range).
    #[error("invalid input: {0}")]
    Input(String),

    /// Operation called in the wrong state (e.g. inference encode before
    /// codebook statistics are finalized).
    #[error("state error: {0}")]
    State(String),

    /// Model file problems: bad magic, unsupported version, checksum
    /// mismatch, truncation, shape-chain violations.
    #[error("model file error: {0}")]
    ModelFile(String),

    /// Non-finite values where finite ones are required; training aborts.
    #[error("numeric abort: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable process exit code for scripts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) | Error::State(_) => 2,
            Error::ModelFile(_) | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}
