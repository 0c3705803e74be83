//! First-order oracle abstraction and the two cost counters.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{Domain, Regularizer};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Matrix};

/// Values and first derivatives at one query point. `grad_f` is the linear
/// part `pi` and `jac_g` the constraint Jacobian `nu` used by the solvers.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSample {
    pub f_val: f64,
    pub g_val: Vec<f64>,
    pub grad_f: Vec<f64>,
    pub jac_g: Matrix,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostCounters {
    pub oracle_calls: u64,
    pub matvecs: u64,
}

impl CostCounters {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Black box returning `(f(x), g(x), grad f(x), grad g(x))`. Implementations
/// must be pure so that concurrent runs can share one instance.
pub trait FirstOrderOracle: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn sample(&self, x: &[f64]) -> OracleSample;
}

/// Reference solution data attached by the generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub x_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
    /// Optimal value of `f + u`.
    pub f_star: f64,
    pub l_f: f64,
    pub lbar_g: f64,
    pub d_x: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub oracle: Arc<dyn FirstOrderOracle>,
    pub domain: Domain,
    pub reg: Regularizer,
    pub meta: Option<InstanceMeta>,
}

impl ProblemInstance {
    pub fn new(oracle: Arc<dyn FirstOrderOracle>, domain: Domain, reg: Regularizer) -> Result<Self> {
        check_dim(domain.dim(), oracle.dim())?;
        Ok(Self {
            oracle,
            domain,
            reg,
            meta: None,
        })
    }

    pub fn with_meta(mut self, meta: InstanceMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn dim(&self) -> usize {
        self.oracle.dim()
    }

    pub fn num_constraints(&self) -> usize {
        self.oracle.num_constraints()
    }

    /// Composite objective `f(x) + u(x)` from a sample taken at `x`.
    pub fn objective(&self, sample: &OracleSample, x: &[f64]) -> f64 {
        sample.f_val + self.reg.value(x)
    }

    /// Uncounted evaluation for diagnostics and traces. Solvers never call it.
    pub fn peek(&self, x: &[f64]) -> Result<OracleSample> {
        check_dim(self.dim(), x.len())?;
        if !linalg::is_finite(x) {
            return Err(Error::NonFinite);
        }
        Ok(self.oracle.sample(x))
    }

    /// Lagrangian KKT residuals at the attached reference solution.
    pub fn kkt_report(&self) -> Option<Result<KktReport>> {
        self.meta
            .as_ref()
            .map(|m| kkt_report(self, &m.x_star, &m.lambda_star))
    }
}

/// Counted oracle call.
pub fn evaluate(instance: &ProblemInstance, x: &[f64], counters: &mut CostCounters) -> Result<OracleSample> {
    let s = instance.peek(x)?;
    counters.oracle_calls += 1;
    Ok(s)
}

/// `jac * v`, one matvec.
pub fn jac_apply(jac: &Matrix, v: &[f64], counters: &mut CostCounters) -> Result<Vec<f64>> {
    check_dim(jac.cols(), v.len())?;
    counters.matvecs += 1;
    Ok(jac.mul_vec(v))
}

/// `jac^T lam`, one matvec.
pub fn jac_apply_t(jac: &Matrix, lam: &[f64], counters: &mut CostCounters) -> Result<Vec<f64>> {
    check_dim(jac.rows(), lam.len())?;
    counters.matvecs += 1;
    Ok(jac.tr_mul_vec(lam))
}

/// Certified upper bound on the spectral norm (Frobenius).
pub fn operator_norm_upper(jac: &Matrix) -> f64 {
    jac.frobenius()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktReport {
    pub domain_violation: f64,
    pub max_violation: f64,
    pub complementarity: f64,
    pub stationarity: f64,
}

impl KktReport {
    pub fn passes(&self) -> bool {
        self.domain_violation <= 1e-9
            && self.max_violation <= 1e-9
            && self.complementarity <= 1e-7
            && self.stationarity <= 1e-6
    }
}

pub fn kkt_report(instance: &ProblemInstance, x: &[f64], lambda: &[f64]) -> Result<KktReport> {
    check_dim(instance.num_constraints(), lambda.len())?;
    let s = instance.peek(x)?;
    let proj = instance.domain.euclidean_project(x)?;
    let domain_violation = linalg::dist_sq(x, &proj).sqrt();
    let max_violation = s.g_val.iter().fold(0.0_f64, |a, g| a.max(*g));
    let complementarity = lambda
        .iter()
        .zip(&s.g_val)
        .fold(0.0_f64, |a, (l, g)| a.max((l * g).abs()));
    let mut grad = s.jac_g.tr_mul_vec(lambda);
    linalg::axpy(&mut grad, 1.0, &s.grad_f);
    linalg::axpy(&mut grad, instance.reg.alpha, x);
    let stationarity = instance.domain.stationarity_residual(x, &grad)?;
    Ok(KktReport {
        domain_violation,
        max_violation,
        complementarity,
        stationarity,
    })
}

/// Hessian of one quadratic piece.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum QuadForm {
    Zero,
    Dense(Matrix),
    /// `scale * T` with `T` the tridiagonal matrix with 2 on the diagonal and
    /// -1 off it.
    Chain { scale: f64 },
}

impl QuadForm {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            QuadForm::Zero => vec![0.0; x.len()],
            QuadForm::Dense(m) => m.mul_vec(x),
            QuadForm::Chain { scale } => {
                let n = x.len();
                (0..n)
                    .map(|i| {
                        let left = if i > 0 { x[i - 1] } else { 0.0 };
                        let right = if i + 1 < n { x[i + 1] } else { 0.0 };
                        scale * (2.0 * x[i] - left - right)
                    })
                    .collect()
            }
        }
    }
}

/// `x^T P x / 2 + <lin, x> + constant`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadPiece {
    pub hess: QuadForm,
    pub lin: Vec<f64>,
    pub constant: f64,
}

impl QuadPiece {
    pub fn affine(lin: Vec<f64>, constant: f64) -> Self {
        Self {
            hess: QuadForm::Zero,
            lin,
            constant,
        }
    }

    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let px = self.hess.apply(x);
        let val = 0.5 * linalg::dot(x, &px) + linalg::dot(&self.lin, x) + self.constant;
        (val, linalg::add(&px, &self.lin))
    }
}

/// Quadratic objective with quadratic constraints; covers every generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticOracle {
    pub n: usize,
    pub objective: QuadPiece,
    pub constraints: Vec<QuadPiece>,
}

impl FirstOrderOracle for QuadraticOracle {
    fn dim(&self) -> usize {
        self.n
    }

    fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    fn sample(&self, x: &[f64]) -> OracleSample {
        let (f_val, grad_f) = self.objective.value_grad(x);
        let mut g_val = Vec::with_capacity(self.constraints.len());
        let mut jac = Matrix::zeros(self.constraints.len(), self.n);
        for (i, c) in self.constraints.iter().enumerate() {
            let (v, gr) = c.value_grad(x);
            g_val.push(v);
            jac.row_mut(i).copy_from_slice(&gr);
        }
        OracleSample {
            f_val,
            g_val,
            grad_f,
            jac_g: jac,
        }
    }
}
