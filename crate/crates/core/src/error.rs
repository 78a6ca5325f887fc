use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its valid domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The truncation window drops more probability mass than allowed.
    #[error("truncation tail mass {tail_mass:.3e} exceeds {limit:.1e}; n_max must be at least {required_n_max}")]
    Truncation {
        tail_mass: f64,
        limit: f64,
        required_n_max: usize,
    },

    /// A statistic is undefined for the given input (e.g. g2 of vacuum).
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    /// Conditioning removed every outcome.
    #[error("empty ensemble: {0}")]
    EmptyEnsemble(String),

    /// Observed quantities contradict the model.
    #[error("inconsistent input: {0}")]
    Inconsistent(String),

    /// Malformed file or record.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Format(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
