use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid reference frame: |v| = {speed} m/s is not below c")]
    InvalidFrame { speed: f64 },

    #[error("no simultaneity frame exists: events are {class} separated")]
    NoSuchFrame { class: &'static str },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-physical state: {0}")]
    NonPhysical(String),

    #[error("invalid quantum state: {0}")]
    InvalidState(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("insufficient data for setting combination {combination}")]
    InsufficientData { combination: String },

    #[error("no significant correlation peak (peak {peak} counts over mean {mean:.2}, tail probability {p_value:.3e})")]
    NoSignal { peak: u64, mean: f64, p_value: f64 },

    #[error("input stream is not time-sorted at index {index}")]
    Unsorted { index: usize },

    #[error("causality violation: {0}")]
    CausalityViolation(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the failure is numerical rather than caused by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
