use thiserror::Error;

use crate::solvers::IterativeResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    /// Block CG hit a non-positive curvature block. The last iterate is kept.
    #[error("block CG breakdown after {} iterations", .0.iterations)]
    SolverBreakdown(Box<IterativeResult>),

    #[error("basis was built for a different model")]
    StaleBasis,

    #[error("reduced operator is singular even after diagonal shift")]
    ReducedSingular,
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
