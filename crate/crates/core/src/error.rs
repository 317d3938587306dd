use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("moment undefined: {0}")]
    MomentUndefined(&'static str),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("weak instrument: first-stage coefficient is {0:e}")]
    WeakInstrument(f64),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("estimation failed: {0}")]
    EstimationFailed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
