use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("modulation does not match registry: {0}")]
    Modulation(String),

    #[error("training failed at iteration {iteration}: {reason}")]
    Training { iteration: usize, reason: String },

    #[error("adaptation failed at step {step}: {reason}")]
    Adaptation { step: usize, reason: String },

    #[error("{}: {reason}", path.display())]
    Io { path: PathBuf, reason: String },

    #[error("{}: corrupt file: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            reason: err.to_string(),
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Short category label used for process exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Domain(_) => "domain",
            Error::Argument(_) => "argument",
            Error::Validation(_) => "validation",
            Error::Modulation(_) => "modulation",
            Error::Training { .. } => "training",
            Error::Adaptation { .. } => "adaptation",
            Error::Io { .. } => "io",
            Error::Corrupt { .. } => "corrupt",
        }
    }
}
