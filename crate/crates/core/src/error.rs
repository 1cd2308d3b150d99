use thiserror::Error;

use crate::metrics::MatchReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("solver failure at iteration {iteration}: {reason}")]
    Solver { iteration: usize, reason: String },

    #[error("all blocks pruned at iteration {iteration}")]
    AllPruned { iteration: usize },

    #[error("estimate count {estimates} does not match truth count {truth}")]
    CountMismatch {
        estimates: usize,
        truth: usize,
        /// Greedy nearest-neighbour matching over the overlapping subset.
        partial: Box<MatchReport>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn solver(iteration: usize, reason: impl Into<String>) -> Self {
        Error::Solver {
            iteration,
            reason: reason.into(),
        }
    }
}
