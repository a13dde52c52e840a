use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid problem setup: {0}")]
    InvalidSpec(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("index {index} out of range for dimension {dim}")]
    InvalidIndex { index: usize, dim: usize },

    #[error("covariance is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    InvalidCovariance { min_eigenvalue: f64 },

    #[error("solver diverged at iteration {iteration} (tau = {tau})")]
    SolverDiverged { iteration: usize, tau: f64 },

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
