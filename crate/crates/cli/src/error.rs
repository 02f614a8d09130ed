use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] trajtta::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {reason}", path.display())]
    Io { path: PathBuf, reason: String },
    #[error("run directory {} holds a different configuration with the same hash", path.display())]
    HashCollision { path: PathBuf },
    #[error("{} is not empty; pass --force to overwrite", path.display())]
    NotEmpty { path: PathBuf },
    #[error("frozen backbone changed during adaptation: {before} -> {after}")]
    BackboneMutated { before: String, after: String },
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.into(),
            reason: err.to_string(),
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            Self::Core(e) => e.category(),
            Self::Config(_) => "config",
            Self::Io { .. } => "io",
            Self::HashCollision { .. } => "collision",
            Self::NotEmpty { .. } => "io",
            Self::BackboneMutated { .. } => "validation",
        }
    }

    /// Process exit code for this failure category.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "io" | "corrupt" => 3,
            "collision" => 4,
            "training" | "adaptation" => 5,
            _ => 1,
        }
    }
}
