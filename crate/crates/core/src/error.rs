use thiserror::Error;

/// Errors raised by the design, solver and certification layers.
#[derive(Debug, Error)]
pub enum RfdError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("unstable plant: spectral radius {0} is not below 1")]
    Unstable(f64),
    #[error("plant pattern violation: {0}")]
    Pattern(String),
    #[error("singular leading tap (condition number {0:.3e})")]
    SingularTap(f64),
    #[error("unsupported penalty: {0}")]
    Unsupported(String),
    #[error("enumeration cap exceeded: {count} > {cap}")]
    Cap { count: u128, cap: u128 },
    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, RfdError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(RfdError::Dimension(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(RfdError::Invalid(msg.into()))
}
