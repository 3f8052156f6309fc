use std::path::{Path, PathBuf};

use mobilecaps_core::TensorError;

/// Everything a command can fail with. Each kind has its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("io error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Diverged(_) => 4,
            Error::Io { .. } => 5,
            Error::Other(_) => 1,
        }
    }

    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.as_ref().to_path_buf();
        move |source| Error::Io { path, source }
    }

    pub fn config(e: impl std::fmt::Display) -> Error {
        Error::Config(e.to_string())
    }

    pub fn data(e: impl std::fmt::Display) -> Error {
        Error::Data(e.to_string())
    }
}

impl From<TensorError> for Error {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Config(_) | TensorError::DropoutRate(_) => Error::Config(e.to_string()),
            TensorError::NonFinite(_) => Error::Diverged(e.to_string()),
            other => Error::Other(other.to_string()),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
