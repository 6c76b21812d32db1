use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("hazard is singular at t = 0 for Weibull shape {shape} < 1")]
    Singularity { shape: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("integration failed for observation {index:?}: {reason}")]
    Integration { index: Option<usize>, reason: String },

    #[error("invalid usage: {0}")]
    Usage(String),

    #[error("degenerate likelihood: {0}")]
    Degenerate(String),

    #[error("estimating-function Jacobian is near singular (condition number {condition:.3e})")]
    NearSingular { condition: f64 },

    #[error("censoring calibration failed: {0}")]
    Calibration(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn at_observation(self, index: usize) -> Self {
        match self {
            Error::Integration { reason, .. } => Error::Integration {
                index: Some(index),
                reason,
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
