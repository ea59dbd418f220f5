use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An MDP or transition tensor violates a structural invariant.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An argument is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The MSE variance term is undefined (no observations for a row).
    #[error("undefined variance: {0}")]
    UndefinedVariance(String),

    /// A linear solve or iteration failed numerically.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A configuration file is missing, malformed, or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// An I/O failure, reported with the path involved.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (CLI maps these to exit code 2).
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidParameter(_) | Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
