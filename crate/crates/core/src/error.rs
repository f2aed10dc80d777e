use thiserror::Error;

/// Errors raised by the toolkit. Every variant names the offending input.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("belt truncated: s_max = {s_max} does not close the belt for n = {n}")]
    BeltTruncated { s_max: f64, n: u64 },

    #[error("posterior diverges: {0}")]
    DivergentPosterior(String),

    #[error("inner optimization did not converge at s = {s}: {reason}")]
    NoConvergence { s: f64, reason: String },

    #[error("likelihood crossing not found: {0}")]
    CrossingNotFound(String),

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("covariance is not positive semi-definite: {0}")]
    NotPositiveSemiDefinite(String),

    #[error("method/model mismatch: {0}")]
    Mismatch(String),

    #[error("no H0 sensitivity: 1 - p0 = 0, CLs undefined")]
    NoNullSensitivity,

    #[error("fit failure: {0}")]
    FitFailure(String),

    #[error("insufficient input: {0}")]
    Insufficient(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
