use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid process spec: {field} {reason}")]
    InvalidSpec { field: &'static str, reason: String },

    #[error("level index {j} out of range (max {max})")]
    LevelOutOfRange { j: usize, max: usize },

    #[error("node ({j}, {k}) does not exist")]
    NodeOutOfRange { j: usize, k: i64 },

    #[error("non-finite moment at level {j}")]
    NonFiniteMoment { j: usize },

    #[error("conditional variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("branch solver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("node values not increasing at level {j}: offset {k} <= offset {}", k - 1)]
    Ordering { j: usize, k: i64 },

    #[error("unknown export format `{0}`")]
    UnknownFormat(String),

    #[error("invalid correlation matrix: {0}")]
    InvalidCorrelation(String),

    #[error("invalid forest: {0}")]
    InvalidForest(String),

    #[error("payoff is not finite at node ({j}, {k})")]
    NonFinitePayoff { j: usize, k: i64 },

    #[error("discount factor {factor} outside (0, 1] at node ({j}, {k})")]
    InvalidDiscount { j: usize, k: i64, factor: f64 },

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("maturity {tau} outside basis range [{lo}, {hi}]")]
    TauOutOfRange { tau: f64, lo: f64, hi: f64 },

    #[error("expected {expected} coefficients, got {got}")]
    CoefficientMismatch { expected: usize, got: usize },

    #[error("invalid curve basis: {0}")]
    InvalidBasis(String),

    #[error("malformed lattice document: {0}")]
    Parse(String),
}
