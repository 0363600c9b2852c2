use thiserror::Error;

use crate::env::Party;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{name} must lie in (0, 1], got {value}")]
    InvalidProbability { name: &'static str, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0} has no locally open channel")]
    NoOpenChannels(Party),

    #[error("{0} is not a stationary strategy")]
    NotStationary(String),

    #[error("input mismatch: {0}")]
    InputMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
