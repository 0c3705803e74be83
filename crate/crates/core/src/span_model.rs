//! Executable form of the linear-span first-order model: a memory of the
//! directions a method has seen, checked against every query it makes.

use std::sync::{Arc, Mutex};

use crate::error::{check_dim, Error, Result};
use crate::instances::{NonstrongHardParams, StrongHardParams};
use crate::linalg::{self, axpy, dot, norm};
use crate::oracle::{FirstOrderOracle, OracleSample, ProblemInstance};

/// Relative residual threshold for span membership.
pub const SPAN_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpanMemory {
    /// Orthonormal basis of the explored subspace.
    pub basis: Vec<Vec<f64>>,
    /// Largest 1-based coordinate touched by any recorded vector.
    pub discovered_coords: usize,
    pub queries: usize,
}

impl SpanMemory {
    /// Memory holding only the starting point (nothing when it is zero).
    pub fn new(x0: &[f64]) -> Self {
        let mut mem = Self::default();
        mem.absorb(x0);
        mem
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    fn project_out(&self, v: &[f64]) -> Vec<f64> {
        let mut r = v.to_vec();
        // Two passes keep Gram-Schmidt stable.
        for _ in 0..2 {
            for q in &self.basis {
                let c = dot(&r, q);
                axpy(&mut r, -c, q);
            }
        }
        r
    }

    /// Distance from `y` to the current span.
    pub fn residual(&self, y: &[f64]) -> f64 {
        norm(&self.project_out(y))
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        self.residual(y) <= SPAN_TOL * (1.0 + norm(y))
    }

    fn absorb(&mut self, v: &[f64]) {
        if let Some(last) = v.iter().rposition(|c| *c != 0.0) {
            self.discovered_coords = self.discovered_coords.max(last + 1);
        }
        let scale = norm(v);
        if scale == 0.0 || !scale.is_finite() {
            return;
        }
        let r = self.project_out(v);
        let rn = norm(&r);
        if rn > SPAN_TOL * scale {
            self.basis.push(linalg::scale(&r, 1.0 / rn));
        }
    }

    /// Checks that `query` lies in the span, then adds `grad f` and the rows
    /// of the constraint Jacobian.
    pub fn record_query(&mut self, query: &[f64], sample: &OracleSample) -> Result<()> {
        check_dim(sample.grad_f.len(), query.len())?;
        let res = self.residual(query);
        if res > SPAN_TOL * (1.0 + norm(query)) {
            return Err(Error::SpanViolation(res));
        }
        self.queries += 1;
        self.absorb(&sample.grad_f);
        for i in 0..sample.jac_g.rows() {
            self.absorb(sample.jac_g.row(i));
        }
        Ok(())
    }
}

/// Oracle wrapper feeding every query through a [`SpanMemory`]. Violations
/// are stored rather than raised since oracles cannot fail.
#[derive(Debug)]
pub struct SpanOracle {
    inner: Arc<dyn FirstOrderOracle>,
    state: Mutex<SpanState>,
}

#[derive(Debug, Default)]
struct SpanState {
    mem: SpanMemory,
    violations: Vec<(usize, f64)>,
    /// `discovered_coords` after each query.
    history: Vec<usize>,
}

impl SpanOracle {
    pub fn new(inner: Arc<dyn FirstOrderOracle>, x0: &[f64]) -> Self {
        Self {
            inner,
            state: Mutex::new(SpanState {
                mem: SpanMemory::new(x0),
                ..SpanState::default()
            }),
        }
    }

    /// Returns the instance with its oracle wrapped and a handle to the checker.
    pub fn wrap(instance: &ProblemInstance, x0: &[f64]) -> Result<(ProblemInstance, Arc<SpanOracle>)> {
        check_dim(instance.dim(), x0.len())?;
        let spy = Arc::new(SpanOracle::new(instance.oracle.clone(), x0));
        let mut wrapped = ProblemInstance::new(spy.clone(), instance.domain.clone(), instance.reg)?;
        wrapped.meta = instance.meta.clone();
        Ok((wrapped, spy))
    }

    pub fn memory(&self) -> SpanMemory {
        self.state.lock().unwrap().mem.clone()
    }

    /// `(query index, residual)` of each out-of-span query.
    pub fn violations(&self) -> Vec<(usize, f64)> {
        self.state.lock().unwrap().violations.clone()
    }

    pub fn discovered_history(&self) -> Vec<usize> {
        self.state.lock().unwrap().history.clone()
    }
}

impl FirstOrderOracle for SpanOracle {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn num_constraints(&self) -> usize {
        self.inner.num_constraints()
    }

    fn sample(&self, x: &[f64]) -> OracleSample {
        let s = self.inner.sample(x);
        let mut st = self.state.lock().unwrap();
        let idx = st.mem.queries;
        if let Err(Error::SpanViolation(res)) = st.mem.record_query(x, &s) {
            st.violations.push((idx, res));
            // Keep going so one stray query does not mask later behavior.
            st.mem.queries += 1;
            st.mem.absorb(x);
            st.mem.absorb(&s.grad_f);
            for i in 0..s.jac_g.rows() {
                st.mem.absorb(s.jac_g.row(i));
            }
        }
        let d = st.mem.discovered_coords;
        st.history.push(d);
        s
    }
}

/// Lower bound `beta gamma^2 / (2k + 2)` on the squared violation
/// `g_2(x)` of any point supported on the first `k` coordinates, for `t <= k`
/// span-respecting queries.
pub fn feasibility_floor(p: &NonstrongHardParams, t: usize) -> Result<f64> {
    p.validate()?;
    if t > p.k {
        return Err(Error::InvalidParameter(format!("t = {t} exceeds k = {}", p.k)));
    }
    Ok(p.beta * p.gamma * p.gamma / (2.0 * p.k as f64 + 2.0))
}

/// `Delta^{2t} |x*|^2` for the untruncated strongly convex chain started at 0:
/// the squared distance left by any point supported on `t` coordinates.
pub fn strong_distance_floor(p: &StrongHardParams, t: usize) -> Result<f64> {
    p.validate()?;
    let d2 = p.delta() * p.delta();
    // |x*|^2 = sum_{i>=1} Delta^{2i}
    Ok(d2.powi(t as i32) * d2 / (1.0 - d2))
}

/// `sum_{i > t} x_i^2`: the distance from `x` to anything supported on the
/// first `t` coordinates.
pub fn tail_mass(x: &[f64], t: usize) -> f64 {
    x.iter().skip(t).map(|v| v * v).sum()
}
