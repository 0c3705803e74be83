//! Doubling search over the aggregate smoothness guess, with a verifiable
//! stopping test built from the run's own linearizations.

use serde::{Deserialize, Serialize};

use crate::acgd::{run_acgd, RunOptions};
use crate::acgd_s::{run_acgd_s, SlidingParams};
use crate::error::{Error, Result};
use crate::linalg;
use crate::oracle::{evaluate, CostCounters, ProblemInstance};
use crate::subproblem::certified_lower_bound;
use crate::trace::{TraceRow, WeightedDualData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Acgd,
    AcgdS,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub eps: f64,
    pub c: f64,
    pub r: f64,
    /// Upper bound on the radius of X.
    pub d_x: f64,
    pub alpha: f64,
    /// Starting guess for `L` (ACGD) or `H` (ACGD-S).
    pub initial_guess: f64,
    pub method: Method,
    pub max_doublings: usize,
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        pos("eps", self.eps)?;
        pos("r", self.r)?;
        pos("D_X", self.d_x)?;
        pos("initial guess", self.initial_guess)?;
        if !(self.c >= 1.0) || !self.c.is_finite() {
            return Err(Error::InvalidParameter(format!("c must be >= 1, got {}", self.c)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub f_under: f64,
    pub feas_norm: f64,
    /// `F(x_bar) - f_under`.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerminationCheck {
    pub pass: bool,
    pub objective: f64,
    pub certificate: Certificate,
}

#[derive(Clone, Debug)]
pub struct SearchRound {
    pub guess: f64,
    pub phases: usize,
    pub rows: Vec<TraceRow>,
    pub check: TerminationCheck,
}

#[derive(Clone, Debug)]
pub struct SearchReport {
    pub solution: Vec<f64>,
    pub total_oracle_calls: u64,
    pub total_matvecs: u64,
    pub doublings_used: usize,
    pub final_guess: f64,
    /// Sum of phases over all rounds.
    pub total_phases: usize,
    pub rounds: Vec<SearchRound>,
    pub certificate: Certificate,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub doublings: usize,
    pub final_guess: f64,
    pub oracle_calls: u64,
    pub matvecs: u64,
    pub feas_norm: f64,
    pub gap: f64,
}

impl SearchReport {
    pub fn summary(&self) -> SearchSummary {
        SearchSummary {
            doublings: self.doublings_used,
            final_guess: self.final_guess,
            oracle_calls: self.total_oracle_calls,
            matvecs: self.total_matvecs,
            feas_norm: self.certificate.feas_norm,
            gap: self.certificate.gap,
        }
    }
}

fn ceil_count(v: f64) -> usize {
    if v.is_finite() && v < usize::MAX as f64 {
        (v.ceil() as usize).max(1)
    } else {
        usize::MAX
    }
}

/// Phase count for one round at the given guess.
pub fn iteration_limit(guess: f64, cfg: &SearchConfig) -> usize {
    let (eps, d) = (cfg.eps, cfg.d_x);
    match (cfg.method, cfg.alpha > 0.0) {
        (Method::Acgd, false) => ceil_count((2.0 * guess / eps).sqrt() * d),
        (Method::AcgdS, false) => ceil_count((3.0 * guess / eps).sqrt() * d),
        (Method::Acgd, true) => {
            let a = cfg.alpha;
            let arg = cfg.c.max(1.0) * (guess * a).sqrt() * d * d / eps + 1.0;
            ceil_count(((guess / a).sqrt() + 1.0) * arg.ln()).saturating_add(4)
        }
        (Method::AcgdS, true) => {
            let a = cfg.alpha;
            let arg = 3.0 * (cfg.c / cfg.r).max(1.0) * (guess * a).sqrt() * d * d / eps + 1.0;
            ceil_count(((2.0 * guess / a).sqrt() + 1.0) * arg.ln()).saturating_add(4)
        }
    }
}

/// One counted oracle call at `x_bar` plus the certified lower bound from
/// the run's weighted linearizations.
pub fn termination_check(
    x_bar: &[f64],
    instance: &ProblemInstance,
    dual: &WeightedDualData,
    cfg: &SearchConfig,
    counters: &mut CostCounters,
) -> Result<TerminationCheck> {
    if !instance.domain.is_bounded() {
        return Err(Error::UnboundedDomain);
    }
    let s = evaluate(instance, x_bar, counters)?;
    let feas_norm = linalg::pos_norm(&s.g_val);
    let objective = instance.objective(&s, x_bar);
    let rel = dual.relaxation();
    let cert = certified_lower_bound(&rel, &instance.domain, instance.reg, 1e-3 * cfg.eps, counters)?;
    let gap = objective - cert.f_under;
    Ok(TerminationCheck {
        pass: feas_norm <= cfg.eps / cfg.c && gap <= cfg.eps,
        objective,
        certificate: Certificate {
            f_under: cert.f_under,
            feas_norm,
            gap,
        },
    })
}

/// Runs rounds at guesses `initial_guess * 2^j` until the stopping test
/// passes, each round warm-started at the previous ergodic average.
pub fn run_search(instance: &ProblemInstance, cfg: &SearchConfig, counters: &mut CostCounters) -> Result<SearchReport> {
    cfg.validate()?;
    if !instance.domain.is_bounded() {
        return Err(Error::UnboundedDomain);
    }
    if (cfg.alpha - instance.reg.alpha).abs() > 1e-12 * cfg.alpha.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "search alpha {} differs from the instance's {}",
            cfg.alpha, instance.reg.alpha
        )));
    }
    let start = *counters;
    let mut guess = cfg.initial_guess;
    let mut x0: Option<Vec<f64>> = None;
    let mut rounds = Vec::new();
    let mut total_phases = 0usize;
    let mut j = 0usize;
    loop {
        let n = iteration_limit(guess, cfg);
        if n == usize::MAX {
            return Err(Error::InvalidParameter(format!("phase count overflows at guess {guess}")));
        }
        let opts = RunOptions {
            x0: x0.take(),
            step_tol: None,
            log_every: n.div_ceil(200).max(1),
        };
        let trace = match cfg.method {
            Method::Acgd => run_acgd(instance, guess, cfg.r, n, counters, &opts)?,
            Method::AcgdS => {
                let p = SlidingParams {
                    l: guess,
                    r_bar: guess,
                    r_hat: cfg.d_x,
                    delta: None,
                };
                run_acgd_s(instance, &p, n, counters, &opts)?
            }
        };
        total_phases += n;
        let check = termination_check(&trace.x_bar, instance, &trace.dual, cfg, counters)?;
        let pass = check.pass;
        let certificate = check.certificate;
        rounds.push(SearchRound {
            guess,
            phases: n,
            rows: trace.rows,
            check,
        });
        let report = |success: bool, rounds: Vec<SearchRound>, counters: &CostCounters| SearchReport {
            solution: trace.x_bar.clone(),
            total_oracle_calls: counters.oracle_calls - start.oracle_calls,
            total_matvecs: counters.matvecs - start.matvecs,
            doublings_used: j,
            final_guess: guess,
            total_phases,
            rounds,
            certificate,
            success,
        };
        if pass {
            return Ok(report(true, rounds, counters));
        }
        if j >= cfg.max_doublings {
            return Err(Error::SearchExhausted(Box::new(report(false, rounds, counters))));
        }
        x0 = Some(trace.x_bar.clone());
        guess *= 2.0;
        j += 1;
    }
}
