use alloc::string::String;
use thiserror::Error;

/// Every failure the numerical core can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("volatility is singular: smallest eigenvalue of sigma*sigma' is {min_eigenvalue:e}")]
    SingularVolatility { min_eigenvalue: f64 },
    #[error("risk premium component {index} is {value}; all components must be > 0")]
    NonPositivePremium { index: usize, value: f64 },
    #[error("matrix is not positive definite (eigenvalue {eigenvalue:e})")]
    NotPositiveDefinite { eigenvalue: f64 },
    #[error("time {t} lies outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },
    #[error("exploration intensity must be finite and >= 0, got {c}")]
    InvalidIntensity { c: f64 },
    #[error("invalid admissible set: {0}")]
    InvalidSet(String),
    #[error("degenerate scenario: {0}")]
    DegenerateScenario(String),
    #[error("{function} is undefined at {x}")]
    DomainError { function: &'static str, x: f64 },
    #[error("derivative does not change sign on [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },
    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("grid has {cells} cells, cap is {cap}")]
    GridTooLarge { cells: usize, cap: usize },
    #[error("covariance is not positive semi-definite")]
    FactorizationFailure,
    #[error("need at least 2 finite paths, got {paths}")]
    TooFewPaths { paths: usize },
    #[error("parse error on line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("price {price} at row {index} is not strictly positive")]
    NonPositivePrice { index: usize, price: f64 },
    #[error("dates are not strictly increasing at row {index}")]
    UnsortedDates { index: usize },
    #[error("window of {window} returns does not fit in {available} returns")]
    WindowTooLarge { window: usize, available: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },
    #[error("non-finite gradient at step {step}")]
    NonFinite { step: usize },
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numeric_failure(&self) -> bool {
        matches!(
            self,
            Error::NoBracket { .. }
                | Error::NonConvergence { .. }
                | Error::FactorizationFailure
                | Error::Divergence { .. }
                | Error::NonFinite { .. }
        )
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
