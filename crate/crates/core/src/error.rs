use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("profile must contain at least one node")]
    EmptyProfile,

    #[error("access probability at index {index} is {value}, must lie strictly inside (0, 1)")]
    InvalidProbability { index: usize, value: f64 },

    #[error("budget must be positive and finite, got {0}")]
    InvalidBudget(f64),

    #[error("allocation amount at index {index} is {value}, must be finite and non-negative")]
    InvalidAmount { index: usize, value: f64 },

    #[error("dimension mismatch: profile has {expected} nodes, allocation has {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("allocation uses {used} but the budget is {budget}")]
    OverBudget { used: f64, budget: f64 },

    #[error("budget {budget} exceeds node count {n}; the unit-box face is empty")]
    BudgetExceedsNodes { budget: f64, n: usize },

    #[error("exact enumeration over {n} nodes exceeds the limit of {limit}")]
    EnumerationLimit { n: usize, limit: usize },

    #[error("Monte Carlo estimation needs at least one trial")]
    ZeroTrials,

    #[error("Chernoff parameter t must be {requirement}, got {value}")]
    InvalidT {
        value: f64,
        requirement: &'static str,
    },

    #[error("closed-form allocation undefined: p[{index}] = {value} is not above 1/2")]
    ClosedFormUndefined { index: usize, value: f64 },

    #[error("invalid epsilon bracket [{lo}, {hi}]: need 0 < lo < hi < 1")]
    InvalidBracket { lo: f64, hi: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("config error in `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
