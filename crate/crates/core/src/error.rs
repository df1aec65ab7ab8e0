use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid mirror exponent: {0}")]
    InvalidExponent(String),

    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),

    /// A gossip matrix failed validation; the message names the violated property.
    #[error("invalid gossip matrix: {0}")]
    InvalidGossip(String),

    /// sigma_2(U) >= 1, so the graph is disconnected or periodic.
    #[error("gossip assumption violated: sigma_2 = {sigma2}")]
    AssumptionViolated { sigma2: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A dual update produced a non-finite value.
    #[error("non-finite value at round {round}, client {client}, step {step}: {what}")]
    NonFinite {
        round: usize,
        client: usize,
        step: usize,
        what: String,
    },

    #[error("solver did not converge after {iters} iterations (residual {residual:e})")]
    NotConverged { iters: usize, residual: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidDimension(_)
                | Error::InvalidExponent(_)
                | Error::InvalidConstraint(_)
                | Error::InvalidGossip(_)
                | Error::InvalidConfig(_)
                | Error::Parse(_)
                | Error::Csv(_)
                | Error::DimensionMismatch { .. }
        )
    }
}
