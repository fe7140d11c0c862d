use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
///
/// The variants split into two families: validation problems (bad input,
/// mismatched shapes, malformed files) and numerical failures (a factorization
/// broke down or a result went non-finite). [`Error::is_numerical`] tells them
/// apart; the CLI maps them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is not SPD: non-positive pivot {value:e} at index {index}")]
    NotSpd { index: usize, value: f64 },
    #[error("matrix is singular (pivot {index})")]
    Singular { index: usize },
    #[error("degenerate face {face}: area {area:e}")]
    DegenerateFace { face: usize, area: f64 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotSpd { .. } | Error::Singular { .. } | Error::NonFinite(_) | Error::DegenerateFace { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
