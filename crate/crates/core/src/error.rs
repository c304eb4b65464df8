use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("negative entry {value} at column {col}")]
    NegativeEntry { col: usize, value: f64 },

    #[error("row sum {sum} exceeds one")]
    RowSumExceedsOne { sum: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(
        "power iteration did not converge after {iterations} iterations (last estimate {estimate})"
    )]
    NonConvergence { iterations: usize, estimate: f64 },

    #[error("update at step {step} violates {summary}")]
    AssumptionViolated { step: usize, summary: String },

    #[error("running product has no sub-stochastic row")]
    NoSubStochasticRow,

    #[error("invalid index: {0}")]
    InvalidIndex(String),

    #[error("invalid slice length {0}; must be at least 1")]
    InvalidLength(usize),

    #[error("length cap is meaningless at i={i}: beta2={beta2} is not below exp(-gamma2 i^-gamma1)={threshold}")]
    MeaninglessBound {
        i: usize,
        beta2: f64,
        threshold: f64,
    },

    #[error("invalid subset: {0}")]
    InvalidSubset(String),

    #[error("infeasible weights: {0}")]
    InfeasibleWeights(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
