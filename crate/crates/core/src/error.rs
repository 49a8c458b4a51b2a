use thiserror::Error;

/// Errors raised by the model, calibration, simulation and training layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter `{name}` out of domain: {value} ({constraint})")]
    ParamDomain {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("Bernoulli jump approximation needs lambda*dt < 1, got {0}")]
    ApproximationDomain(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid sample: {0}")]
    Sample(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in parameter block `{block}` at index {index}")]
    NonFiniteGradient { block: String, index: usize },

    #[error("non-finite log-likelihood at initialization (offending parameter: {param})")]
    Initialization { param: &'static str },

    #[error("utility domain error: argument {0} must be positive")]
    UtilityDomain(f64),

    #[error("non-finite objective at epoch {epoch}, batch {batch}, path {path}")]
    NonFiniteObjective {
        epoch: usize,
        batch: usize,
        path: usize,
    },

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
