use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid kernel parameter `{param}`: {reason}")]
    InvalidKernel { param: &'static str, reason: String },
    #[error("invalid nonlinearity: {0}")]
    InvalidNonlinearity(String),
    #[error("initialization failed: {0}")]
    Initialization(String),
    #[error("value {value} outside [{lo}, {hi})")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("time step underflow at t = {t}: dt = {dt:e} ({detail})")]
    StepUnderflow { t: f64, dt: f64, detail: String },
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
