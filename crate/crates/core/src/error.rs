use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("cosine undefined for a zero-norm input")]
    UndefinedCosine,

    #[error("non-finite value at step {step}: {what}")]
    Numeric { step: usize, what: String },

    #[error("ill-conditioned reference: frozen - reference MSE = {gap:e} is below margin {margin:e}")]
    IllConditionedReference { gap: f64, margin: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// True for errors that mean a run blew up numerically rather than was misconfigured.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Numeric { .. })
    }
}
