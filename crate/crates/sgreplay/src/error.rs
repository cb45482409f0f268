//! Crate-wide error type with a stable mapping to process exit codes.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad spec values, unknown order codes,
    /// strategy/benchmark mismatches.
    #[error("config error: {0}")]
    Config(String),

    /// Invalid or inconsistent data: malformed samples, split-integrity
    /// violations, missing run artifacts.
    #[error("data error: {0}")]
    Data(String),

    /// Training diverged (NaN/inf loss).
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn divergence(msg: impl Into<String>) -> Self {
        Error::Divergence(msg.into())
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn json(path: impl AsRef<Path>, source: serde_json::Error) -> Self {
        Error::Json { path: path.as_ref().to_path_buf(), source }
    }

    /// Process exit code for the CLI: 0 ok, 2 config, 3 data, 4 divergence,
    /// 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Json { .. } => 3,
            Error::Divergence(_) => 4,
            Error::Io { .. } => 5,
        }
    }
}
