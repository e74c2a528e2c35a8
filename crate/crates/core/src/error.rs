use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants are grouped so the CLI can map them onto exit codes:
/// configuration problems, estimator failures and data problems.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid bandwidth {0}; must be > 0")]
    InvalidBandwidth(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("outside objective domain: {0}")]
    Domain(String),

    #[error("estimator failure: {0}")]
    Estimator(String),

    #[error("generator failure: {0}")]
    Generator(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

impl Error {
    /// Process exit code: 2 configuration, 3 estimator, 4 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::InvalidBandwidth(_) => 2,
            Error::Estimator(_) => 3,
            _ => 4,
        }
    }
}
