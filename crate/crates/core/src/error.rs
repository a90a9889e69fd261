use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    #[error("non-finite values produced by {0}")]
    NonFinite(String),

    #[error("mass matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("fixed-point map failed to contract: {0}")]
    NoContraction(String),

    #[error("quadrature resolution insufficient: {0}")]
    QuadratureResolution(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("decay hypothesis violated by {count} sample pair(s)")]
    HypothesisViolated { count: usize },

    #[error("malformed file {}: {msg} (at byte offset {offset})", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

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

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidGrid(_) | Error::Config(_) | Error::InvalidInput(_) => 1,
            Error::DegenerateDensity(_)
            | Error::NonFinite(_)
            | Error::NotSpd(_)
            | Error::NoContraction(_)
            | Error::QuadratureResolution(_)
            | Error::GridMismatch(_)
            | Error::HypothesisViolated { .. } => 2,
            Error::Format { .. } | Error::Io { .. } => 3,
        }
    }
}
