//! ACGD with sliding: the outer phases of ACGD with the constrained prox step
//! replaced by a budgeted primal-dual inner loop of X-projections and
//! closed-form multiplier updates.

use serde::Serialize;

use crate::acgd::{build_schedule, check_outer_with_slack, leq, Ergodic, OuterSchedule, RunOptions, Violation};
use crate::error::{Error, Result};
use crate::linalg::{self, axpy};
use crate::oracle::{evaluate, jac_apply, jac_apply_t, operator_norm_upper, CostCounters, ProblemInstance};
use crate::trace::{diagnose, RunTrace, TraceRow, WeightedDualData};

/// Relative slack allowed by [`check_sliding_conditions`].
pub const SLIDING_SLACK: f64 = 1e-10;

/// Inner-loop parameters of one phase, arrays indexed by `s - 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InnerSchedule {
    pub t: usize,
    pub s_t: usize,
    /// Strong case only.
    pub gamma_t: Option<f64>,
    pub delta: Vec<f64>,
    pub beta: Vec<f64>,
    /// `f64::INFINITY` marks a frozen multiplier (zero Jacobian).
    pub gamma: Vec<f64>,
    pub rho: Vec<f64>,
    /// `W_{t+1}` (strong case).
    pub w_next: Option<f64>,
    pub m_t: f64,
    /// `S_t / (Delta t)` (nonstrong case).
    pub m_tilde: Option<f64>,
}

impl InnerSchedule {
    fn frozen(t: usize, w_next: Option<f64>, m_tilde: Option<f64>) -> Self {
        Self {
            t,
            s_t: 1,
            gamma_t: None,
            delta: vec![1.0],
            beta: vec![0.0],
            gamma: vec![f64::INFINITY],
            rho: vec![1.0],
            w_next,
            m_t: 0.0,
            m_tilde,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.m_t == 0.0
    }

    /// `ln(delta_S / sum_s delta_s)`, the share of the last inner iterate.
    fn log_last_share(&self) -> f64 {
        let sum: f64 = self.delta.iter().sum();
        (self.delta[self.s_t - 1] / sum).ln()
    }

    fn log_first_share(&self) -> f64 {
        let sum: f64 = self.delta.iter().sum();
        (self.delta[0] / sum).ln()
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// `S = ceil(M Delta t)`, `M~ = S / (Delta t)`, `beta = M~ r_bar / R_hat`,
/// `gamma = M~^2 / beta`, `delta = 1`, `rho_1 = M~_t / M~_{t-1}`.
pub fn inner_schedule_nonstrong(
    t: usize,
    m_t: f64,
    m_tilde_prev: Option<f64>,
    delta: f64,
    r_bar: f64,
    r_hat: f64,
) -> Result<InnerSchedule> {
    check_positive("Delta", delta)?;
    check_positive("r_bar", r_bar)?;
    check_positive("R_hat", r_hat)?;
    if t == 0 {
        return Err(Error::InvalidParameter("phase index starts at 1".into()));
    }
    if !(m_t >= 0.0) || !m_t.is_finite() {
        return Err(Error::InvalidParameter(format!("M_t must be >= 0, got {m_t}")));
    }
    if m_t == 0.0 {
        return Ok(InnerSchedule::frozen(t, None, m_tilde_prev));
    }
    let dt = delta * t as f64;
    let s_t = ((m_t * dt).ceil() as usize).max(1);
    let m_tilde = s_t as f64 / dt;
    let beta = m_tilde * r_bar / r_hat;
    let gamma = m_tilde * m_tilde / beta;
    let mut rho = vec![1.0; s_t];
    rho[0] = m_tilde_prev.map_or(1.0, |p| m_tilde / p);
    Ok(InnerSchedule {
        t,
        s_t,
        gamma_t: None,
        delta: vec![1.0; s_t],
        beta: vec![beta; s_t],
        gamma: vec![gamma; s_t],
        rho,
        w_next: None,
        m_t,
        m_tilde: Some(m_tilde),
    })
}

/// Strongly convex inner schedule. `w_t` is the outer weight, `big_w` the
/// carried `W_t` (`None` on the first phase or after a frozen first phase),
/// and `prev_log_last` the log aggregate weight of the previous phase's last
/// inner iterate, used for `rho_1`.
pub fn inner_schedule_strong(
    t: usize,
    m_t: f64,
    big_w: Option<f64>,
    log_w_t: f64,
    delta: f64,
    alpha: f64,
    prev_log_last: Option<f64>,
) -> Result<InnerSchedule> {
    check_positive("Delta", delta)?;
    check_positive("alpha", alpha)?;
    if !(m_t >= 0.0) || !m_t.is_finite() {
        return Err(Error::InvalidParameter(format!("M_t must be >= 0, got {m_t}")));
    }
    if m_t == 0.0 {
        return Ok(InnerSchedule::frozen(t, big_w, None));
    }
    let target = (log_w_t + (m_t * m_t * delta).ln()).exp();
    if !target.is_finite() {
        return Err(Error::InvalidParameter(format!("inner budget overflows at phase {t}")));
    }
    let m2 = m_t * m_t;
    let mut sched = match big_w {
        None => {
            // S(S+1)/2 >= target
            let mut s = (((8.0 * target + 1.0).sqrt() - 1.0) / 2.0).ceil().max(1.0) as usize;
            while s > 1 && ((s - 1) * s) as f64 / 2.0 >= target {
                s -= 1;
            }
            while ((s * (s + 1)) as f64 / 2.0) < target {
                s += 1;
            }
            let big_gamma = ((s * (s + 1)) as f64 / (2.0 * target)).sqrt();
            let delta_s: Vec<f64> = (1..=s).map(|k| k as f64 / big_gamma).collect();
            InnerSchedule {
                t,
                s_t: s,
                gamma_t: Some(big_gamma),
                beta: (1..=s).map(|k| alpha / 4.0 * (k as f64 - 1.0)).collect(),
                gamma: delta_s.iter().map(|d| 4.0 / alpha * m2 * big_gamma / d).collect(),
                rho: vec![1.0; s],
                w_next: Some(delta_s[s - 1] / m_t),
                delta: delta_s,
                m_t,
                m_tilde: None,
            }
        }
        Some(w) => {
            let a = w * m_t;
            // min S with S a + S(S-1)/2 >= target
            let disc = (a - 0.5) * (a - 0.5) + 2.0 * target;
            let mut s = ((0.5 - a + disc.sqrt()).ceil().max(1.0)) as usize;
            let budget = |s: usize| s as f64 * a + ((s * (s - 1)) as f64) / 2.0;
            while s > 1 && budget(s - 1) >= target {
                s -= 1;
            }
            while budget(s) < target {
                s += 1;
            }
            let sa = s as f64 * a;
            let big_gamma = (sa + (sa * sa + 2.0 * target * (s * (s - 1)) as f64).sqrt()) / (2.0 * target);
            let delta_s: Vec<f64> = (1..=s).map(|k| a + (k as f64 - 1.0) / big_gamma).collect();
            let beta = (1..=s)
                .map(|k| {
                    if k == 1 {
                        alpha / 4.0 * a * big_gamma
                    } else {
                        alpha / 4.0 * (a * big_gamma + k as f64 - 2.0)
                    }
                })
                .collect();
            InnerSchedule {
                t,
                s_t: s,
                gamma_t: Some(big_gamma),
                beta,
                gamma: delta_s.iter().map(|d| 4.0 / alpha * m2 * big_gamma / d).collect(),
                rho: vec![1.0; s],
                w_next: Some(delta_s[s - 1] / m_t),
                delta: delta_s,
                m_t,
                m_tilde: None,
            }
        }
    };
    for k in 1..sched.s_t {
        sched.rho[k] = sched.delta[k - 1] / sched.delta[k];
    }
    sched.rho[0] = match prev_log_last {
        Some(prev) => (prev - (log_w_t + sched.log_first_share())).exp(),
        None => 1.0,
    };
    Ok(sched)
}

/// Streaming form of [`check_sliding_conditions`]: push inner schedules in
/// phase order, then call [`SlidingChecker::finish`].
pub struct SlidingChecker<'a> {
    outer: &'a OuterSchedule,
    alpha: f64,
    prev: Option<InnerSchedule>,
    violations: Vec<Violation>,
}

impl<'a> SlidingChecker<'a> {
    pub fn new(outer: &'a OuterSchedule, alpha: f64) -> Self {
        let violations = check_outer_with_slack(outer, alpha / 2.0, outer.l, SLIDING_SLACK);
        Self {
            outer,
            alpha,
            prev: None,
            violations,
        }
    }

    fn flag(&mut self, t: usize, condition: &'static str, lhs: f64, rhs: f64) {
        if !leq(lhs, rhs, SLIDING_SLACK) {
            self.violations.push(Violation { t, condition, lhs, rhs });
        }
    }

    pub fn push(&mut self, cur: InnerSchedule) {
        let half = self.alpha / 2.0;
        if !cur.is_frozen() {
            let (d, b, g, r) = (&cur.delta, &cur.beta, &cur.gamma, &cur.rho);
            let m2 = cur.m_t * cur.m_t;
            let mut found = Vec::new();
            for k in 0..cur.s_t - 1 {
                found.push(("intra_beta", d[k + 1] * b[k + 1], d[k] * (b[k] + half)));
                found.push(("intra_gamma", d[k + 1] * g[k + 1], d[k] * g[k]));
                found.push(("intra_coupling", r[k + 1] * m2, g[k] * b[k + 1]));
                found.push(("intra_rho", r[k + 1] * d[k + 1], d[k]));
            }
            for (name, lhs, rhs) in found {
                self.flag(cur.t, name, lhs, rhs);
                if name == "intra_rho" && !leq(rhs, lhs, SLIDING_SLACK) {
                    self.violations.push(Violation { t: cur.t, condition: name, lhs: rhs, rhs: lhs });
                }
            }
        }
        if let Some(prev) = self.prev.take() {
            if !prev.is_frozen() && !cur.is_frozen() {
                let lw = &self.outer.log_w;
                let last = lw[prev.t - 1] + prev.log_last_share();
                let first = lw[cur.t - 1] + cur.log_first_share();
                // Compare w_S^t (...) >= w_1^{t+1} (...) after dividing by w_1^{t+1}.
                let ratio = (last - first).exp();
                let s = prev.s_t - 1;
                self.flag(cur.t, "inter_beta", cur.beta[0], ratio * (prev.beta[s] + half));
                self.flag(cur.t, "inter_gamma", cur.gamma[0], ratio * prev.gamma[s]);
                self.flag(
                    cur.t,
                    "inter_coupling",
                    cur.rho[0] * prev.m_t * prev.m_t,
                    prev.gamma[s] * cur.beta[0],
                );
                let rho_gap = (cur.rho[0] - ratio).abs();
                if rho_gap > SLIDING_SLACK * ratio.max(cur.rho[0]) {
                    self.violations.push(Violation {
                        t: cur.t,
                        condition: "inter_rho",
                        lhs: cur.rho[0],
                        rhs: ratio,
                    });
                }
            }
        }
        self.prev = Some(cur);
    }

    pub fn finish(mut self) -> Vec<Violation> {
        if let Some(last) = self.prev.take() {
            if !last.is_frozen() && last.t == self.outer.len() {
                let s = last.s_t - 1;
                self.flag(
                    last.t,
                    "terminal",
                    last.m_t * last.m_t,
                    last.gamma[s] * (last.beta[s] + self.alpha / 2.0),
                );
            }
        }
        self.violations
    }
}

/// Outer conditions (with `alpha / 2`), intra-phase and inter-phase
/// conditions, each to [`SLIDING_SLACK`] relative slack.
pub fn check_sliding_conditions(outer: &OuterSchedule, inners: &[InnerSchedule], alpha: f64) -> Vec<Violation> {
    let mut c = SlidingChecker::new(outer, alpha);
    for s in inners {
        c.push(s.clone());
    }
    c.finish()
}

/// Step parameters of one ACGD-S run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlidingParams {
    /// Aggregate smoothness `L`.
    pub l: f64,
    /// Multiplier radius `r_bar = |lambda*| + r`.
    pub r_bar: f64,
    /// Estimate of `|x0 - x*|`.
    pub r_hat: f64,
    /// Inner budget scale; `None` picks the default for the regime.
    pub delta: Option<f64>,
}

impl SlidingParams {
    /// `r_bar / (R_hat L)` for `alpha = 0`, `r_bar^2 / (L R_hat^2 alpha)` otherwise.
    pub fn resolved_delta(&self, alpha: f64) -> f64 {
        self.delta.unwrap_or(if alpha > 0.0 {
            self.r_bar * self.r_bar / (self.l * self.r_hat * self.r_hat * alpha)
        } else {
            self.r_bar / (self.r_hat * self.l)
        })
    }
}

/// Generates inner schedules phase by phase from the observed `M_t`.
#[derive(Clone, Debug)]
pub struct InnerPlanner {
    alpha: f64,
    delta: f64,
    r_bar: f64,
    r_hat: f64,
    m_tilde_prev: Option<f64>,
    big_w: Option<f64>,
    prev_log_last: Option<f64>,
}

impl InnerPlanner {
    pub fn new(params: &SlidingParams, alpha: f64) -> Self {
        Self {
            alpha,
            delta: params.resolved_delta(alpha),
            r_bar: params.r_bar,
            r_hat: params.r_hat,
            m_tilde_prev: None,
            big_w: None,
            prev_log_last: None,
        }
    }

    /// Schedule of phase `t` given `M_t` and the outer log weight `ln w_t`.
    pub fn next(&mut self, t: usize, m_t: f64, log_w_t: f64) -> Result<InnerSchedule> {
        if self.alpha > 0.0 {
            let s = inner_schedule_strong(t, m_t, self.big_w, log_w_t, self.delta, self.alpha, self.prev_log_last)?;
            if !s.is_frozen() {
                self.big_w = s.w_next;
                self.prev_log_last = Some(log_w_t + s.log_last_share());
            }
            Ok(s)
        } else {
            let s = inner_schedule_nonstrong(t, m_t, self.m_tilde_prev, self.delta, self.r_bar, self.r_hat)?;
            self.m_tilde_prev = s.m_tilde;
            Ok(s)
        }
    }
}

/// Builds the full schedule a run would use for a given `M_t` sequence.
pub fn plan_schedules(params: &SlidingParams, alpha: f64, m_seq: &[f64]) -> Result<(OuterSchedule, Vec<InnerSchedule>)> {
    let outer = build_schedule(params.l, alpha / 2.0, m_seq.len())?;
    let mut planner = InnerPlanner::new(params, alpha);
    let inners = m_seq
        .iter()
        .enumerate()
        .map(|(i, m)| planner.next(i + 1, *m, outer.log_w[i]))
        .collect::<Result<Vec<_>>>()?;
    Ok((outer, inners))
}

/// Runs `N` phases of ACGD-S.
pub fn run_acgd_s(
    instance: &ProblemInstance,
    params: &SlidingParams,
    n_phases: usize,
    counters: &mut CostCounters,
    opts: &RunOptions,
) -> Result<RunTrace> {
    check_positive("L", params.l)?;
    check_positive("r_bar", params.r_bar)?;
    check_positive("R_hat", params.r_hat)?;
    let alpha = instance.reg.alpha;
    let sched = build_schedule(params.l, alpha / 2.0, n_phases)?;
    let delta = params.resolved_delta(alpha);
    check_positive("Delta", delta)?;
    let mut planner = InnerPlanner::new(params, alpha);
    let n = instance.dim();
    let m = instance.num_constraints();
    let x0 = opts.start(instance)?;
    let first = evaluate(instance, &x0, counters)?;
    let mut nu_prev = first.jac_g;
    let mut x_prev2 = x0.clone();
    let mut x_prev = x0.clone();
    let mut x_under = x0.clone();
    let mut y_carry = x0;
    let mut lam_carry = vec![0.0; m];
    let mut lam_carry_prev = vec![0.0; m];
    let mut avg = Ergodic::new(n);
    let mut dual = WeightedDualData::new(n, m);
    let mut rows = Vec::new();
    let mut inner_total = 0u64;
    let mut m_values = Vec::with_capacity(n_phases);
    for t in 1..=n_phases {
        let i = t - 1;
        let (tau, theta, eta) = (sched.tau[i], sched.theta[i], sched.eta[i]);
        let x_tilde: Vec<f64> = x_prev
            .iter()
            .zip(&x_prev2)
            .map(|(a, b)| a + theta * (a - b))
            .collect();
        x_under = x_under
            .iter()
            .zip(&x_tilde)
            .map(|(a, b)| (tau * a + b) / (1.0 + tau))
            .collect();
        let s = evaluate(instance, &x_under, counters)?;
        let nu = &s.jac_g;
        let m_t = operator_norm_upper(nu);
        m_values.push(m_t);
        let inner = planner.next(t, m_t, sched.log_w[i])?;
        let (offset, nu_x) = if m > 0 {
            let nx = jac_apply(nu, &x_under, counters)?;
            (s.g_val.iter().zip(&nx).map(|(g, v)| g - v).collect::<Vec<f64>>(), nx)
        } else {
            (Vec::new(), Vec::new())
        };

        // h = nu_t^T lam_{s-1}; h_prev = nu_t^T lam_{s-2}
        let mut h = if m > 0 { jac_apply_t(nu, &lam_carry, counters)? } else { vec![0.0; n] };
        let mut h_prev = h.clone();
        let mut lam = lam_carry.clone();
        let mut lam_before = lam_carry_prev.clone();
        let mut y = y_carry.clone();
        let mut y_sum = vec![0.0; n];
        let mut lam_sum = vec![0.0; m];
        let mut delta_sum = 0.0;
        for k in 0..inner.s_t {
            let mut h_tilde = h.clone();
            if k == 0 {
                if m > 0 && lam != lam_before {
                    let diff = linalg::sub(&lam, &lam_before);
                    let ext = jac_apply_t(&nu_prev, &diff, counters)?;
                    axpy(&mut h_tilde, inner.rho[0], &ext);
                }
            } else {
                for j in 0..n {
                    h_tilde[j] += inner.rho[k] * (h[j] - h_prev[j]);
                }
            }
            let lin: Vec<f64> = h_tilde.iter().zip(&s.grad_f).map(|(a, b)| a + b).collect();
            let w = eta + inner.beta[k];
            let center: Vec<f64> = x_prev
                .iter()
                .zip(&y)
                .map(|(a, b)| (eta * a + inner.beta[k] * b) / w)
                .collect();
            y = instance.domain.x_projection(instance.reg, &lin, &center, w)?;
            if m > 0 && inner.gamma[k].is_finite() {
                let ny = jac_apply(nu, &y, counters)?;
                let next: Vec<f64> = (0..m)
                    .map(|j| (lam[j] + (ny[j] + offset[j]) / inner.gamma[k]).max(0.0))
                    .collect();
                lam_before = std::mem::replace(&mut lam, next);
                h_prev = std::mem::replace(&mut h, jac_apply_t(nu, &lam, counters)?);
            } else {
                lam_before = lam.clone();
                h_prev = h.clone();
            }
            let d = inner.delta[k];
            axpy(&mut y_sum, d, &y);
            axpy(&mut lam_sum, d, &lam);
            delta_sum += d;
        }
        inner_total += inner.s_t as u64;
        let x_t: Vec<f64> = y_sum.iter().map(|v| v / delta_sum).collect();
        let lam_tilde: Vec<f64> = lam_sum.iter().map(|v| v / delta_sum).collect();
        lam_carry = lam;
        lam_carry_prev = lam_before;
        y_carry = y;
        dual.push(sched.log_w[i], &s.grad_f, s.f_val, nu, &s.g_val, &x_under, &nu_x, &lam_tilde);
        avg.push(sched.log_w[i], &x_t);
        nu_prev = s.jac_g.clone();
        x_prev2 = std::mem::replace(&mut x_prev, x_t);
        if opts.logs(t, n_phases) {
            let (obj_gap, feas_norm, dist_sq) = diagnose(instance, &avg.x_bar)?;
            rows.push(TraceRow {
                t,
                oracle_calls: counters.oracle_calls,
                matvecs: counters.matvecs,
                obj_gap,
                feas_norm,
                dist_sq,
                s_t: Some(inner.s_t),
            });
        }
    }
    Ok(RunTrace {
        rows,
        x_bar: avg.x_bar,
        x_last: x_prev,
        dual,
        counters: *counters,
        inner_iterations: inner_total,
        m_values,
    })
}
