use std::io;

use thiserror::Error;

/// Errors raised by the encoder, learner, harness, data and theory modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sparsity: {0}")]
    InvalidSparsity(String),

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid input: expected length {expected}, got {actual}")]
    InvalidInput { expected: usize, actual: usize },

    #[error("invalid class index {index} (class count {count})")]
    InvalidClass { index: usize, count: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("infeasible prototype constraint after {attempts} attempts (achieved max cosine {achieved:.6}, target {target})")]
    Infeasible {
        attempts: usize,
        achieved: f64,
        target: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for errors caused by bad parameters rather than bad data or I/O.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidSparsity(_)
                | Error::InvalidDimension(_)
                | Error::InvalidClass { .. }
                | Error::Config(_)
                | Error::InvalidSchedule(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
