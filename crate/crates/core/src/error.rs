use thiserror::Error;

use crate::measure::ProductMeasure;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),

    #[error("invalid circle map: {0}")]
    InvalidMap(String),

    #[error("stationary distribution is not unique (second-smallest singular value {second_singular:.3e})")]
    NonUniqueStationary { second_singular: f64 },

    #[error("stationary solvers disagree by {gap:.3e}")]
    SolverDisagreement { gap: f64 },

    #[error("state {state} carries zero stationary mass")]
    ZeroMassState { state: usize },

    #[error("pair is not bounded: p[{row}][{col}] = 0")]
    NotBounded { row: usize, col: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("fixed-point iteration did not converge in {max_iter} steps (residual {residual:.3e})")]
    NoConvergence {
        max_iter: usize,
        residual: f64,
        last: Box<ProductMeasure>,
        cesaro: Box<ProductMeasure>,
    },

    #[error("enumeration of {size} words exceeds the limit {limit}")]
    TooLarge { size: u128, limit: u128 },

    #[error("hypothesis h >= h o F fails at word {word:?}, bin {bin}")]
    HypothesisFailed { word: Vec<usize>, bin: usize },

    #[error("every ladder arc exceeded diameter 1/4 (escape steps {escape_times:?})")]
    AllLaddersBlewUp { escape_times: Vec<usize> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
