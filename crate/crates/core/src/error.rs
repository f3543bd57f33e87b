use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid context matrix: {0}")]
    InvalidContextMatrix(String),
    #[error("invalid mean specification: {0}")]
    InvalidMeans(String),
    #[error("arm index {arm} out of range for {n} arms")]
    ArmOutOfRange { arm: usize, n: usize },
    #[error("no unique best arm")]
    NoUniqueBestArm,
    #[error("not initialized: {0}")]
    NotInitialized(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("instance generation failed after {attempts} attempts")]
    GenerationFailed { attempts: usize },
    #[error("degenerate ray: origin and through coincide")]
    DegenerateRay,
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
