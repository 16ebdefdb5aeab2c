use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid stimulus: {0}")]
    InvalidStimulus(String),

    #[error("singular local window at row {row} (bandwidth {bandwidth})")]
    SingularWindow { row: usize, bandwidth: f64 },

    #[error("no candidate bandwidth produced a valid smoother")]
    NoValidBandwidth,

    #[error("series too short: {0}")]
    InsufficientLength(String),

    #[error("infeasible autocovariance estimate: {0}")]
    InfeasibleCovariance(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("ill-posed design: gram condition number {condition:.3e} exceeds limit")]
    IllPosedDesign { condition: f64 },

    #[error("insufficient data: n = {n} observations for {p} coefficients")]
    InsufficientData { n: usize, p: usize },

    #[error("invalid hypothesis: {0}")]
    InvalidHypothesis(String),

    #[error("ill-posed hypothesis: A (gram)^-1 A^T is singular")]
    IllPosedHypothesis,

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("inconsistent simulation config: {0}")]
    InconsistentConfig(String),

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
