use thiserror::Error;

use crate::subset::SubsetIndex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {p} is outside the supported range 1..={max}")]
    Dimension { p: usize, max: usize },

    #[error("conditional-element table has no entry for subset {0}")]
    IncompleteTable(SubsetIndex),

    #[error("output variance must be positive and finite, got {0}")]
    InvalidVariance(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("expected a {expected} table, got a {found} table")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("inner sample size must be at least 2 to form a variance, got {0}")]
    DegenerateVariance(usize),

    #[error("evaluation budget exceeded: {spent} spent, {requested} more requested, limit {limit}")]
    BudgetExceeded { spent: u64, requested: u64, limit: u64 },

    #[error("sample has no output column")]
    MissingOutputs,

    #[error("no model available for evaluating new input points")]
    MissingModel,

    #[error("covariance block is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    Singular { min_eigenvalue: f64 },

    #[error("exact-permutation procedure refused for p = {p}: {permutations} permutations, {evaluations} evaluations")]
    TooManyPermutations {
        p: usize,
        permutations: u64,
        evaluations: u64,
    },

    #[error("model evaluation failed: {0}")]
    Model(String),
}
