use thiserror::Error;

use crate::policy::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tree: {0}")]
    InvalidTree(#[from] Violation),

    #[error("unknown transform `{0}`")]
    UnknownTransform(String),

    #[error("magnitude level {level} out of range for transform `{transform}`")]
    MagnitudeLevel { transform: String, level: usize },

    #[error("transform `{transform}` expects {expected} samples, got {got}")]
    DomainMismatch {
        transform: String,
        expected: &'static str,
        got: &'static str,
    },

    #[error("magnitude {0} outside the allowed range")]
    InvalidMagnitude(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("unknown group {0}")]
    UnknownGroup(u32),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty validation set")]
    EmptyValidation,

    #[error("label {label} out of range for {outputs} outputs")]
    LabelOutOfRange { label: String, outputs: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("illegal frontier index {0}")]
    IllegalIndex(u32),

    #[error("exact evaluation of a tree with stochastic transforms needs a per-sample seed")]
    ExactNeedsSeed,

    #[error("inverse-HVP recursion diverged at term {term} (iterate norm {norm:.3e}); use a smaller gamma")]
    Divergence { term: usize, norm: f64 },

    #[error("damped Hessian is not positive definite")]
    Indefinite,

    #[error("inner solve did not reach tolerance {tol:e} (gradient norm {achieved:.3e})")]
    InnerSolve { tol: f64, achieved: f64 },

    #[error("exhaustive search needs {needed} candidates, budget is {budget}")]
    BudgetExceeded { needed: u64, budget: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid dataset: {0}")]
    Data(String),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
