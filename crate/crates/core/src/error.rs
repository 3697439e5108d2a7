use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("lattice size {0} is odd; the staggered decomposition needs an even ring")]
    OddLattice(usize),

    #[error("eigensolver failed to converge")]
    Eigensolver,

    /// A physical invariant of the correlation matrix was violated beyond
    /// tolerance. Usually cured by a smaller time step.
    #[error("invariant violated at t = {time}: {detail} (try a smaller dt)")]
    Invariant { time: f64, detail: String },

    #[error("normalization of the order-parameter distance is zero")]
    ZeroNormalization,

    #[error("many-body oracle supports L <= {max}, got L = {got}")]
    OracleTooLarge { max: usize, got: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
