use thiserror::Error;

/// Errors produced by the design, inference and scenario pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("covariance matrix is not numerically positive definite (n = {n})")]
    FactorizationFailed { n: usize },

    #[error("optimizer failed to converge: {0}")]
    NoConvergence(String),

    #[error("output variance {variance:e} at t = {time} is too small to normalise Sobol' indices")]
    DegenerateVariance { time: f64, variance: f64 },

    #[error("Sobol' estimate {value} for {param} at t = {time} is outside [-tol, 1 + tol]")]
    IndexOutOfTolerance { param: &'static str, time: f64, value: f64 },

    #[error("design time {0} is not present in the cached sensitivity grid")]
    TimeNotInGrid(f64),

    #[error("infeasible design constraints: {0}")]
    InfeasibleConstraints(String),

    #[error("only {retained} parameter samples passed the likelihood threshold (need {required})")]
    TooFewRetained { retained: usize, required: usize },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
