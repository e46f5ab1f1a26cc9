//! Post-hoc alignment metrics between two representations of the same samples.

mod cca;
mod cka;
mod correlation;

pub use cca::{canonical_correlations, mean_cca, DEFAULT_RIDGE};
pub use cka::linear_cka;
pub use correlation::{
    average_ranks, pairwise_cosine_vector, pearson, perm_pvalue, spearman, Statistic,
    DEFAULT_PERMUTATION_TRIALS,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least {needed} samples, got {got}")]
    SampleSize { needed: usize, got: usize },
    #[error("inputs disagree on length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("covariance of {0} is singular; retry with a positive ridge")]
    Singular(&'static str),
    #[error("invalid argument: {0}")]
    Config(String),
}
