use thiserror::Error;

/// Errors raised across the optimization engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("gram matrix not positive definite after jitter {jitter:e}")]
    Fitting { jitter: f64 },

    #[error("objective returned a non-finite value at input {input:?}")]
    NonFinite { input: Vec<f64> },

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("trace format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
