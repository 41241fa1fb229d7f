use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("argument {value} outside validated range: {reason}")]
    OutOfRange { value: f64, reason: &'static str },

    #[error("degenerate truncation interval [{lo}, {hi}] (probability mass {mass:e})")]
    DegenerateInterval { lo: f64, hi: f64, mass: f64 },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("conditioning too extreme: acceptance rate {rate:e} below floor {floor:e}")]
    ExtremeConditioning { rate: f64, floor: f64 },

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
