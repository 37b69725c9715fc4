use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("factorization failed after trying jitter levels {jitter_levels:?}")]
    Factorization { jitter_levels: Vec<f64> },

    #[error("region {region}: {source}")]
    Region {
        region: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stochastic training diverged at step {step}")]
    Diverged { step: usize },

    #[error("all {restarts} optimization restarts failed")]
    OptimizationFailed {
        restarts: usize,
        traces: Vec<crate::hyperopt::OptimizationTrace>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
