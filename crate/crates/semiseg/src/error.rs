//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unreadable image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("mask is quarantined while a training guard is active")]
    MaskQuarantined,

    #[error("all experiment cells failed")]
    AllCellsFailed,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 0 success, 2 config, 3 data, 4 all cells failed.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::AllCellsFailed => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
