use std::io;
use std::path::PathBuf;

use aggre_core::{KgError, TrainError};
use thiserror::Error;

/// Failure classes, each mapped to its own process exit code.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: invalid format: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl AppError {
    pub const EXIT_CONFIG: i32 = 2;
    pub const EXIT_DATA: i32 = 3;
    pub const EXIT_NUMERICAL: i32 = 4;
    pub const EXIT_IO: i32 = 5;

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => Self::EXIT_CONFIG,
            AppError::Data(_) | AppError::Format { .. } => Self::EXIT_DATA,
            AppError::Numerical(_) => Self::EXIT_NUMERICAL,
            AppError::Io { .. } => Self::EXIT_IO,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        AppError::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<TrainError> for AppError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => AppError::Config(m),
            TrainError::EmptyTrain => AppError::Data(e.to_string()),
            TrainError::Observer { .. } => AppError::Data(e.to_string()),
            TrainError::Numerical { .. } | TrainError::Divergence { .. } => AppError::Numerical(e.to_string()),
        }
    }
}

impl From<KgError> for AppError {
    fn from(e: KgError) -> Self {
        AppError::Data(e.to_string())
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;
