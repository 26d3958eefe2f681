use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// Tensor or layer shape contract violated.
    #[error("shape error: {0}")]
    Shape(String),

    /// A forward/backward pass produced NaN or Inf.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Binary file (MVOL/MNET) malformed.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// Invalid configuration or arguments.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset-level contract violated (labels, splits, subject overlap).
    #[error("data error: {0}")]
    Data(String),

    /// Training diverged or aborted.
    #[error("training error: {0}")]
    Train(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code for the CLI: 1 for validation problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Data(_) => 1,
            _ => 2,
        }
    }
}
