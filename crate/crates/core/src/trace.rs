//! Per-phase run records and their CSV form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{self, Matrix};
use crate::oracle::{CostCounters, ProblemInstance};

pub const TRACE_HEADER: [&str; 7] = ["t", "oracle_calls", "matvecs", "obj_gap", "feas_norm", "dist_sq", "S_t"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub oracle_calls: u64,
    pub matvecs: u64,
    pub obj_gap: Option<f64>,
    pub feas_norm: f64,
    pub dist_sq: Option<f64>,
    #[serde(rename = "S_t")]
    pub s_t: Option<usize>,
}

/// Running weighted averages of the quantities that define the linearized
/// relaxation: objective pieces and the multiplier-weighted constraint pieces.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedDualData {
    /// average of `pi_t`
    pub pi: Vec<f64>,
    /// average of `f(x_under_t) - <pi_t, x_under_t>`
    pub f_const: f64,
    /// row `i`: average of `lam_ti * nu_ti`
    pub rows: Matrix,
    /// average of `lam_ti * (g_i(x_under_t) - <nu_ti, x_under_t>)`
    pub consts: Vec<f64>,
    /// average of `lam_ti`
    pub lam: Vec<f64>,
    log_total_weight: f64,
}

impl WeightedDualData {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            pi: vec![0.0; n],
            f_const: 0.0,
            rows: Matrix::zeros(m, n),
            consts: vec![0.0; m],
            lam: vec![0.0; m],
            log_total_weight: f64::NEG_INFINITY,
        }
    }

    /// Adds one phase with weight `exp(log_w)`. `nu_x` is `nu * x_under`.
    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        log_w: f64,
        pi: &[f64],
        f_val: f64,
        nu: &Matrix,
        g_val: &[f64],
        x_under: &[f64],
        nu_x: &[f64],
        lam: &[f64],
    ) {
        let total = log_add_exp(self.log_total_weight, log_w);
        let r = (log_w - total).exp();
        self.log_total_weight = total;
        let blend = |old: f64, new: f64| old + r * (new - old);
        for (a, b) in self.pi.iter_mut().zip(pi) {
            *a = blend(*a, *b);
        }
        self.f_const = blend(self.f_const, f_val - linalg::dot(pi, x_under));
        for i in 0..lam.len() {
            let li = lam[i];
            for (a, b) in self.rows.row_mut(i).iter_mut().zip(nu.row(i)) {
                *a = blend(*a, li * b);
            }
            self.consts[i] = blend(self.consts[i], li * (g_val[i] - nu_x[i]));
            self.lam[i] = blend(self.lam[i], li);
        }
    }

    /// Relaxation with each constraint normalized by its aggregate multiplier;
    /// rows whose aggregate multiplier vanishes are masked out.
    pub fn relaxation(&self) -> crate::subproblem::Relaxation {
        let m = self.lam.len();
        let n = self.pi.len();
        let mut rows = Matrix::zeros(m, n);
        let mut consts = vec![0.0; m];
        let mut active = vec![false; m];
        for i in 0..m {
            if self.lam[i] > 0.0 {
                active[i] = true;
                for (a, b) in rows.row_mut(i).iter_mut().zip(self.rows.row(i)) {
                    *a = b / self.lam[i];
                }
                consts[i] = self.consts[i] / self.lam[i];
            }
        }
        crate::subproblem::Relaxation {
            obj_linear: self.pi.clone(),
            obj_const: self.f_const,
            rows,
            consts,
            active,
            multiplier_hint: Some(self.lam.clone()),
        }
    }
}

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Output of one ACGD or ACGD-S run.
#[derive(Clone, Debug)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub x_bar: Vec<f64>,
    pub x_last: Vec<f64>,
    pub dual: WeightedDualData,
    pub counters: CostCounters,
    /// Total inner iterations (ACGD-S) or dual-ascent iterations (ACGD).
    pub inner_iterations: u64,
    /// `M_t` per phase (ACGD-S only).
    pub m_values: Vec<f64>,
}

/// Uncounted diagnostics of the ergodic point for a trace row.
pub(crate) fn diagnose(instance: &ProblemInstance, x_bar: &[f64]) -> Result<(Option<f64>, f64, Option<f64>)> {
    let s = instance.peek(x_bar)?;
    let feas = linalg::pos_norm(&s.g_val);
    let (gap, dist) = match &instance.meta {
        Some(m) => (
            Some(instance.objective(&s, x_bar) - m.f_star),
            Some(linalg::dist_sq(x_bar, &m.x_star)),
        ),
        None => (None, None),
    };
    Ok((gap, feas, dist))
}

fn fmt_opt_f(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.oracle_calls.to_string(),
            r.matvecs.to_string(),
            fmt_opt_f(r.obj_gap),
            format!("{:e}", r.feas_norm),
            fmt_opt_f(r.dist_sq),
            r.s_t.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
