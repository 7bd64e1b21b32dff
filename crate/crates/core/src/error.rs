use thiserror::Error;

/// Errors produced by the modeling, identification and control routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("system is not asymptotically stable (spectral radius {spectral_radius})")]
    UnstableSystem { spectral_radius: f64 },

    #[error("trajectory too short: need {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("quadratic program is infeasible")]
    Infeasible,

    #[error("solver stopped without converging after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("lambda {lambda} is below the certified threshold {threshold}")]
    LambdaTooSmall { lambda: f64, threshold: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
