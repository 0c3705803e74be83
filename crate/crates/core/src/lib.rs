//! Constrained convex optimization with accelerated constrained gradient
//! descent (ACGD) and its sliding variant (ACGD-S), doubling searches for the
//! unknown smoothness constant, hard-instance generators, and separate
//! accounting of oracle calls and Jacobian matrix-vector products.

pub mod acgd;
pub mod acgd_s;
pub mod cli;
pub mod domain;
pub mod error;
pub mod instances;
pub mod linalg;
pub mod oracle;
pub mod par;
pub mod reference;
pub mod search;
pub mod span_model;
pub mod subproblem;
pub mod trace;

pub use domain::{Domain, Regularizer};
pub use error::{Error, Result};
pub use oracle::{CostCounters, OracleSample, ProblemInstance};
