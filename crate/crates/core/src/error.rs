use thiserror::Error;

/// Errors produced by the tracking pipeline and its supporting tools.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("framing error: {0}")]
    Framing(String),
    #[error("no signal: {0}")]
    NoSignal(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("session is not calibrated")]
    Uncalibrated,
    #[error("invalid triangle: {0}")]
    InvalidTriangle(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("segmentation error: {0}")]
    Segmentation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => Error::Io(io),
            other => Error::Format(other.to_string()),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
