use thiserror::Error;

use crate::search::SearchReport;
use crate::subproblem::StepResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("subproblem is unbounded: free space with zero curvature (eta + alpha = 0)")]
    UnboundedSubproblem,

    #[error("operation requires a bounded domain")]
    UnboundedDomain,

    #[error("non-finite query point")]
    NonFinite,

    #[error("linearized constraints look infeasible: multiplier norm {0:e} exceeded the cap")]
    InfeasibleStep(f64),

    #[error("dual ascent stopped at kkt residual {residual:e} after {iters} iterations")]
    ToleranceNotReached {
        residual: f64,
        iters: usize,
        best: Box<StepResult>,
    },

    #[error("query point leaves the span of the oracle memory (residual {0:e})")]
    SpanViolation(f64),

    #[error("search gave up after {} doublings", .0.doublings_used)]
    SearchExhausted(Box<SearchReport>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
