//! The constrained descent step (a linearly constrained prox step) solved by
//! dual ascent, and the Lagrangian lower-bound certificate.

use nalgebra::{DMatrix, DVector};

use crate::domain::{Domain, Regularizer};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, axpy, dot, norm, Matrix};
use crate::oracle::{jac_apply, jac_apply_t, CostCounters};

/// Multiplier norm beyond which the linearization is declared infeasible.
pub const LAMBDA_CAP: f64 = 1e8;
pub const DEFAULT_MAX_ITERS: usize = 50_000;

/// Default step tolerance `1e-10 * max(1, |pi|)`.
pub fn default_tol(pi: &[f64]) -> f64 {
    1e-10 * norm(pi).max(1.0)
}

/// `min_{x in X} <pi, x> + u(x) + eta |x - x_prev|^2 / 2  s.t.  nu (x - x_under) + g <= 0`
#[derive(Clone, Copy, Debug)]
pub struct StepInput<'a> {
    pub pi: &'a [f64],
    pub nu: &'a Matrix,
    pub g_at_center: &'a [f64],
    pub x_under: &'a [f64],
    pub x_prev: &'a [f64],
    pub eta: f64,
    pub domain: &'a Domain,
    pub reg: Regularizer,
    pub tol: f64,
    /// Dual starting point, typically the previous phase's multiplier.
    pub lambda0: Option<&'a [f64]>,
    /// `nu * x_under` when the caller already has it.
    pub nu_x_under: Option<&'a [f64]>,
    pub max_iters: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub x: Vec<f64>,
    pub lam: Vec<f64>,
    pub kkt_residual: f64,
    pub inner_iters: usize,
    pub dual_value: f64,
    /// Dual objective recorded each time the accelerated scheme restarted.
    pub restart_values: Vec<f64>,
}

struct DualPoint {
    lam: Vec<f64>,
    x: Vec<f64>,
    /// Unconstrained minimizer before projection onto X.
    p: Vec<f64>,
    c: Vec<f64>,
    value: f64,
    residual: f64,
}

struct Dual<'a> {
    inp: &'a StepInput<'a>,
    offset: Vec<f64>,
    weight: f64,
}

impl<'a> Dual<'a> {
    fn new(inp: &'a StepInput<'a>, counters: &mut CostCounters) -> Result<Self> {
        let n = inp.domain.dim();
        let m = inp.nu.rows();
        check_dim(n, inp.pi.len())?;
        check_dim(n, inp.nu.cols())?;
        check_dim(m, inp.g_at_center.len())?;
        check_dim(n, inp.x_under.len())?;
        check_dim(n, inp.x_prev.len())?;
        if !(inp.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", inp.tol)));
        }
        let weight = inp.eta + inp.reg.alpha;
        if weight <= 0.0 && !inp.domain.is_bounded() {
            return Err(Error::UnboundedSubproblem);
        }
        let offset = if m > 0 {
            let nx = match inp.nu_x_under {
                Some(v) => {
                    check_dim(m, v.len())?;
                    v.to_vec()
                }
                None => jac_apply(inp.nu, inp.x_under, counters)?,
            };
            inp.g_at_center.iter().zip(&nx).map(|(g, v)| g - v).collect()
        } else {
            Vec::new()
        };
        Ok(Self { inp, offset, weight })
    }

    fn at(&self, lam: Vec<f64>, counters: &mut CostCounters) -> Result<DualPoint> {
        let inp = self.inp;
        let mut y = inp.pi.to_vec();
        if !lam.is_empty() {
            let h = jac_apply_t(inp.nu, &lam, counters)?;
            axpy(&mut y, 1.0, &h);
        }
        let x = inp.domain.x_projection(inp.reg, &y, inp.x_prev, inp.eta)?;
        let p = if self.weight > 0.0 {
            y.iter()
                .zip(inp.x_prev)
                .map(|(yi, xi)| (inp.eta * xi - yi) / self.weight)
                .collect()
        } else {
            x.clone()
        };
        let c: Vec<f64> = if lam.is_empty() {
            Vec::new()
        } else {
            let nx = jac_apply(inp.nu, &x, counters)?;
            nx.iter().zip(&self.offset).map(|(a, b)| a + b).collect()
        };
        let value = dot(&y, &x)
            + inp.reg.value(&x)
            + 0.5 * inp.eta * linalg::dist_sq(&x, inp.x_prev)
            + dot(&lam, &self.offset);
        let residual = kkt_residual(&lam, &c);
        Ok(DualPoint {
            lam,
            x,
            p,
            c,
            value,
            residual,
        })
    }

    /// Semismooth Newton direction on the working set, projected to `lam >= 0`.
    fn newton(&self, pt: &DualPoint, counters: &mut CostCounters) -> Option<Vec<f64>> {
        if self.weight <= 0.0 {
            return None;
        }
        let nu = self.inp.nu;
        let work: Vec<usize> = (0..pt.lam.len())
            .filter(|&i| pt.lam[i] > 0.0 || pt.c[i] > 0.0)
            .collect();
        if work.is_empty() {
            return None;
        }
        let k = work.len();
        let mut h = DMatrix::<f64>::zeros(k, k);
        for (a, &i) in work.iter().enumerate() {
            let col = self.projection_jacobian_apply(&pt.p, nu.row(i));
            let full = jac_apply(nu, &col, counters).ok()?;
            for (b, &j) in work.iter().enumerate() {
                h[(b, a)] = full[j] / self.weight;
            }
        }
        let trace: f64 = (0..k).map(|i| h[(i, i)]).sum();
        for i in 0..k {
            h[(i, i)] += 1e-13 * (1.0 + trace);
        }
        let rhs = DVector::from_iterator(k, work.iter().map(|&i| pt.c[i]));
        let d = h.lu().solve(&rhs)?;
        let mut lam = pt.lam.clone();
        for (a, &i) in work.iter().enumerate() {
            lam[i] = (lam[i] + d[a]).max(0.0);
        }
        lam.iter().all(|v| v.is_finite()).then_some(lam)
    }

    /// Applies the generalized Jacobian of the Euclidean projection at `p`.
    fn projection_jacobian_apply(&self, p: &[f64], v: &[f64]) -> Vec<f64> {
        match self.inp.domain {
            Domain::Free { .. } => v.to_vec(),
            Domain::Box { lower, upper } => (0..v.len())
                .map(|j| if p[j] > lower[j] && p[j] < upper[j] { v[j] } else { 0.0 })
                .collect(),
            Domain::Ball { center, radius } => {
                let d = linalg::sub(p, center);
                let rho = norm(&d);
                if rho <= *radius {
                    v.to_vec()
                } else {
                    let s = radius / rho;
                    let proj = dot(&d, v) / (rho * rho);
                    v.iter().zip(&d).map(|(vi, di)| s * (vi - proj * di)).collect()
                }
            }
        }
    }
}

const NEWTON_CHAIN: usize = 6;

/// Dual values are compared up to rounding noise.
fn value_slack(v: f64) -> f64 {
    1e-13 * v.abs().max(1.0)
}

/// `max(max_i c_i^+, sum_i lam_i |c_i|)`
pub fn kkt_residual(lam: &[f64], c: &[f64]) -> f64 {
    let infeas = c.iter().fold(0.0_f64, |a, v| a.max(*v));
    let comp: f64 = lam.iter().zip(c).map(|(l, v)| l * v.abs()).sum();
    infeas.max(comp)
}

fn finish(pt: DualPoint, iters: usize, restarts: Vec<f64>) -> StepResult {
    StepResult {
        x: pt.x,
        lam: pt.lam,
        kkt_residual: pt.residual,
        inner_iters: iters,
        dual_value: pt.value,
        restart_values: restarts,
    }
}

/// Solves the step by monotone accelerated projected gradient ascent on the
/// dual with adaptive restarts, accelerated further by safeguarded Newton
/// steps on the working set.
pub fn constrained_descent_step(inp: &StepInput, counters: &mut CostCounters) -> Result<StepResult> {
    let dual = Dual::new(inp, counters)?;
    let m = inp.nu.rows();
    let lam0 = match inp.lambda0 {
        Some(l) if l.len() == m => l.iter().map(|v| v.max(0.0)).collect(),
        _ => vec![0.0; m],
    };
    let mut cur = dual.at(lam0, counters)?;
    if m == 0 {
        return Ok(finish(cur, 0, Vec::new()));
    }
    let nu_norm_sq = linalg::norm_sq(inp.nu.as_slice());
    if nu_norm_sq == 0.0 {
        // Constant constraints: feasible iff every offset is nonpositive.
        if let Some(v) = dual.offset.iter().copied().find(|v| *v > inp.tol) {
            return Err(Error::InfeasibleStep(v));
        }
        let pt = dual.at(vec![0.0; m], counters)?;
        return Ok(finish(pt, 0, Vec::new()));
    }
    let step = if dual.weight > 0.0 {
        dual.weight / nu_norm_sq
    } else {
        return Err(Error::InvalidParameter(
            "dual ascent needs eta + alpha > 0".into(),
        ));
    };
    let mut restarts = Vec::new();
    let mut y = cur.lam.clone();
    let mut t_k = 1.0_f64;
    let mut best_res = cur.residual;
    for iter in 1..=inp.max_iters {
        if cur.residual <= inp.tol {
            return Ok(finish(cur, iter - 1, restarts));
        }
        // Newton chain: the working set is re-read at every candidate, so a
        // multiplier that hits zero drops out on the next link.
        let mut probe: Option<DualPoint> = None;
        let mut accepted = false;
        for _ in 0..NEWTON_CHAIN {
            let from = probe.as_ref().unwrap_or(&cur);
            let Some(cand) = dual.newton(from, counters) else { break };
            let pt = dual.at(cand, counters)?;
            if pt.value >= cur.value - value_slack(cur.value) && pt.residual < cur.residual {
                cur = pt;
                accepted = true;
                break;
            }
            probe = Some(pt);
        }
        if accepted {
            y = cur.lam.clone();
            t_k = 1.0;
            best_res = best_res.min(cur.residual);
            continue;
        }
        let at_y = if y == cur.lam { None } else { Some(dual.at(y.clone(), counters)?) };
        let (base_lam, grad) = match &at_y {
            Some(p) => (&p.lam, &p.c),
            None => (&cur.lam, &cur.c),
        };
        let cand: Vec<f64> = base_lam
            .iter()
            .zip(grad)
            .map(|(l, g)| (l + step * g).max(0.0))
            .collect();
        let mut next = dual.at(cand, counters)?;
        if next.value < cur.value - value_slack(cur.value) {
            // Restart from the current iterate with a plain projected step.
            restarts.push(cur.value);
            t_k = 1.0;
            let plain: Vec<f64> = cur
                .lam
                .iter()
                .zip(&cur.c)
                .map(|(l, g)| (l + step * g).max(0.0))
                .collect();
            next = dual.at(plain, counters)?;
            y = next.lam.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt());
            let mom = (t_k - 1.0) / t_next;
            y = next
                .lam
                .iter()
                .zip(&cur.lam)
                .map(|(a, b)| (a + mom * (a - b)).max(0.0))
                .collect();
            t_k = t_next;
        }
        let lam_norm = norm(&next.lam);
        if lam_norm > LAMBDA_CAP {
            return Err(Error::InfeasibleStep(lam_norm));
        }
        if next.value >= cur.value - value_slack(cur.value) {
            cur = next;
        }
        best_res = best_res.min(cur.residual);
    }
    if cur.residual <= inp.tol {
        return Ok(finish(cur, inp.max_iters, restarts));
    }
    Err(Error::ToleranceNotReached {
        residual: cur.residual,
        iters: inp.max_iters,
        best: Box::new(finish(cur, inp.max_iters, restarts)),
    })
}

/// Linear relaxation `min_{x in X} <obj_linear, x> + obj_const + u(x)
/// s.t. rows_i x + consts_i <= 0` for rows with `active[i]`.
#[derive(Clone, Debug)]
pub struct Relaxation {
    pub obj_linear: Vec<f64>,
    pub obj_const: f64,
    pub rows: Matrix,
    pub consts: Vec<f64>,
    pub active: Vec<bool>,
    /// A multiplier that is known to be good, e.g. the weighted average of the
    /// step multipliers.
    pub multiplier_hint: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowerBoundCertificate {
    pub f_under: f64,
    pub dual_multiplier: Vec<f64>,
    pub certified: bool,
}

/// Lagrangian dual value of the relaxation at `mu` (entries for inactive rows
/// are ignored). Valid lower bound for any `mu >= 0`.
pub fn relaxation_dual_value(
    rel: &Relaxation,
    mu: &[f64],
    domain: &Domain,
    reg: Regularizer,
    counters: &mut CostCounters,
) -> Result<f64> {
    let masked: Vec<f64> = mu
        .iter()
        .zip(&rel.active)
        .map(|(v, a)| if *a { v.max(0.0) } else { 0.0 })
        .collect();
    let mut y = rel.obj_linear.clone();
    if !masked.is_empty() {
        axpy(&mut y, 1.0, &jac_apply_t(&rel.rows, &masked, counters)?);
    }
    let center = domain.center();
    let x = domain.x_projection(reg, &y, &center, 0.0)?;
    Ok(dot(&y, &x) + reg.value(&x) + rel.obj_const + dot(&masked, &rel.consts))
}

/// Lower bound on the relaxation optimum. The reported value is always the
/// exact dual function at the chosen multiplier, so it stays valid however
/// inexact the multiplier search was.
pub fn certified_lower_bound(
    rel: &Relaxation,
    domain: &Domain,
    reg: Regularizer,
    tol: f64,
    counters: &mut CostCounters,
) -> Result<LowerBoundCertificate> {
    let n = domain.dim();
    let m = rel.consts.len();
    check_dim(n, rel.obj_linear.len())?;
    check_dim(m, rel.rows.rows())?;
    check_dim(m, rel.active.len())?;
    if m > 0 {
        check_dim(n, rel.rows.cols())?;
    }
    let diam = domain.diameter().ok_or(Error::UnboundedDomain)?;
    let mut candidates = vec![vec![0.0; m]];
    if let Some(h) = &rel.multiplier_hint {
        check_dim(m, h.len())?;
        candidates.push(h.clone());
    }
    let idx: Vec<usize> = (0..m).filter(|&i| rel.active[i]).collect();
    if !idx.is_empty() {
        let mut sub_rows = Matrix::zeros(idx.len(), n);
        for (k, &i) in idx.iter().enumerate() {
            sub_rows.row_mut(k).copy_from_slice(rel.rows.row(i));
        }
        let sub_consts: Vec<f64> = idx.iter().map(|&i| rel.consts[i]).collect();
        let hint: Option<Vec<f64>> = rel
            .multiplier_hint
            .as_ref()
            .map(|h| idx.iter().map(|&i| h[i].max(0.0)).collect());
        let center = domain.center();
        let zero = vec![0.0; n];
        let zero_m = vec![0.0; idx.len()];
        // Smoothing weights from coarse to fine; each stage warm-starts the
        // next and every stage's multiplier is a valid candidate.
        let target = if reg.alpha > 0.0 { 0.0 } else { (2.0 * tol / (diam * diam)).max(1e-300) };
        let mut eta = if reg.alpha > 0.0 {
            0.0
        } else {
            (1.0 + norm(&rel.obj_linear) + rel.rows.frobenius()) / diam
        };
        let mut warm = hint;
        loop {
            eta = eta.max(target);
            let inp = StepInput {
                pi: &rel.obj_linear,
                nu: &sub_rows,
                g_at_center: &sub_consts,
                x_under: &zero,
                x_prev: &center,
                eta,
                domain,
                reg,
                tol,
                lambda0: warm.as_deref(),
                nu_x_under: Some(&zero_m),
                max_iters: 5_000,
            };
            let found = match constrained_descent_step(&inp, counters) {
                Ok(s) => Some(s.lam),
                Err(Error::ToleranceNotReached { best, .. }) => Some(best.lam),
                Err(Error::InfeasibleStep(_)) => None,
                Err(e) => return Err(e),
            };
            if let Some(sub) = found {
                let mut full = vec![0.0; m];
                for (k, &i) in idx.iter().enumerate() {
                    full[i] = sub[k];
                }
                candidates.push(full);
                warm = Some(sub);
            }
            if eta <= target {
                break;
            }
            eta *= 0.1;
        }
    }
    let mut best = (f64::NEG_INFINITY, vec![0.0; m]);
    for mu in candidates {
        let v = relaxation_dual_value(rel, &mu, domain, reg, counters)?;
        if v > best.0 {
            best = (v, mu);
        }
    }
    let dual_multiplier = best
        .1
        .iter()
        .zip(&rel.active)
        .map(|(v, a)| if *a { v.max(0.0) } else { 0.0 })
        .collect();
    Ok(LowerBoundCertificate {
        f_under: best.0,
        dual_multiplier,
        certified: true,
    })
}
