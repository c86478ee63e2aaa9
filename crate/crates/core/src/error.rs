use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::config::ConfigError;
use crate::confidence::ConfidenceError;
use crate::data::DataError;
use crate::gan::GanError;
use crate::network::NetworkError;
use crate::optim::OptimError;
use crate::transport::TransportError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("model does not fit the data: {0}")]
    ModelMismatch(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Process exit codes.
pub mod exit {
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const IO: i32 = 5;
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => exit::CONFIG,
            Self::Gan(GanError::InvalidConfig(_) | GanError::Architecture(_)) => exit::CONFIG,
            Self::Gan(GanError::DatasetTooSmall { .. }) => exit::DATA,
            Self::Data(DataError::Io { .. }) => exit::IO,
            Self::Network(NetworkError::Io(_)) => exit::IO,
            Self::Network(NetworkError::Parse { .. } | NetworkError::DimensionMismatch { .. }) => exit::DATA,
            Self::Data(_) | Self::ModelMismatch(_) | Self::Format { .. } => exit::DATA,
            Self::Transport(TransportError::InsufficientData { .. }) => exit::DATA,
            Self::Io { .. } => exit::IO,
            _ => exit::NUMERIC,
        }
    }
}
