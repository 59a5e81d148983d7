use thiserror::Error;

/// Errors produced by the photocount library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cutoff {cutoff} discards {lost_mass:.3e} of the probability mass (limit {limit:.0e})")]
    TruncationLoss {
        cutoff: usize,
        lost_mass: f64,
        limit: f64,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("cutoff mismatch: {left} vs {right}")]
    CutoffMismatch { left: usize, right: usize },

    #[error("transfer matrix is singular (efficiency is zero)")]
    SingularChannel,

    #[error("zero denominator: {0}")]
    ZeroDenominator(&'static str),

    #[error("histogram has no counts")]
    EmptyHistogram,

    #[error("peak fit did not produce a usable result: {0}")]
    Fit(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
