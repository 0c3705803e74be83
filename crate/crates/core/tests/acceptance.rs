//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed.

mod common;

use std::time::{Duration, Instant};

use acgd_kit::acgd::*;
use acgd_kit::acgd_s::*;
use acgd_kit::cli::settled_row;
use acgd_kit::instances::*;
use acgd_kit::linalg::pos_norm;
use acgd_kit::oracle::{CostCounters, ProblemInstance};
use acgd_kit::search::*;
use acgd_kit::span_model::SpanOracle;
use acgd_kit::subproblem::*;
use acgd_kit::Domain;
use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn lam_norm(inst: &ProblemInstance) -> f64 {
    norm(&inst.meta.as_ref().unwrap().lambda_star)
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let el = start.elapsed();
    o.detail = format!("{} [{:.2}s]", o.detail, el.as_secs_f64());
    if let Some(lim) = limit {
        if el > lim {
            o.pass = false;
            o.detail = format!("{} exceeds {:.0}s limit", o.detail, lim.as_secs_f64());
        }
    }
    o
}

/// Nonstrong chain, every N <= 2000.
fn criterion_1() -> Outcome {
    let p = NonstrongHardParams { k: 10, beta: 1.0, gamma: 1.0, l: 2.0 };
    let inst = gen_nonstrong_hard(&p).unwrap();
    let l = (p.l + 1.0) * 12.0 * p.beta;
    let r0 = norm(&inst.meta.as_ref().unwrap().x_star).powi(2);
    let opts = RunOptions { log_every: 1, ..RunOptions::default() };
    let tr = match run_acgd(&inst, l, 1.0, 2000, &mut CostCounters::new(), &opts) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let mut worst = f64::NEG_INFINITY;
    for row in &tr.rows {
        let n = row.t as f64;
        let bound = 2.0 * l * r0 / (n * (n + 1.0));
        worst = worst.max(row.obj_gap.unwrap().max(row.feas_norm) - bound);
    }
    outcome(
        worst <= 1e-9 && tr.rows.len() == 2000,
        format!("max over N of (error - bound) = {worst:.3e}"),
    )
}

/// Strong chain, N in [5, 300].
fn criterion_2() -> Outcome {
    let p = StrongHardParams { n: 200, lbar_g: 1.0, l: 1.0, alpha: 0.25 };
    let inst = gen_strong_hard(&p).unwrap();
    let meta = inst.meta.clone().unwrap();
    let l = meta.l_f + (lam_norm(&inst) + 1.0) * meta.lbar_g;
    let kappa: f64 = l / p.alpha;
    let r0 = norm(&meta.x_star).powi(2);
    let opts = RunOptions { log_every: 1, ..RunOptions::default() };
    let tr = match run_acgd(&inst, l, 1.0, 300, &mut CostCounters::new(), &opts) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let mut worst = f64::NEG_INFINITY;
    for row in tr.rows.iter().filter(|r| r.t >= 5) {
        let bound = 2.0 * kappa.sqrt() * r0 / ((1.0 + 1.0 / kappa.sqrt()).powi(row.t as i32 - 4) - 1.0);
        worst = worst.max(row.dist_sq.unwrap() - bound);
    }
    outcome(worst <= 1e-9, format!("L = {l}, kappa = {kappa}, max (dist^2 - bound) = {worst:.3e}"))
}

/// Per-grid-point cap on generated inner iterations in the strong case.
const STRONG_INNER_CAP: usize = 1_000_000;

struct GridStats {
    outer_violations: usize,
    sliding_violations: usize,
    schedules: usize,
    inner_total: usize,
    gamma_bound_failures: usize,
    strong_phase_reached: Vec<usize>,
}

fn m_sequence(t: usize) -> f64 {
    0.1 * (1.0 + (t % 7) as f64 / 7.0)
}

fn run_grid() -> GridStats {
    let mut st = GridStats {
        outer_violations: 0,
        sliding_violations: 0,
        schedules: 0,
        inner_total: 0,
        gamma_bound_failures: 0,
        strong_phase_reached: Vec::new(),
    };
    let n = 10_000;
    for &alpha in &[0.0, 0.1, 0.5] {
        for &l in &[0.5, 4.0, 50.0] {
            let outer = build_schedule(l, alpha, n).unwrap();
            st.outer_violations += check_schedule_conditions(&outer, alpha, l).len();
            for &delta in &[0.01, 0.3, 3.0] {
                let params = SlidingParams { l, r_bar: 1.0, r_hat: 1.0, delta: Some(delta) };
                let sliding_outer = build_schedule(l, alpha / 2.0, n).unwrap();
                let mut planner = InnerPlanner::new(&params, alpha);
                let mut checker = SlidingChecker::new(&sliding_outer, alpha);
                let mut generated = 0usize;
                let mut reached = 0;
                for t in 1..=n {
                    // The strong inner count is about sqrt(2 w_t M^2 Delta); stop
                    // before a phase that would not fit under the cap.
                    let m = m_sequence(t);
                    let est = (2.0 * (sliding_outer.log_w[t - 1]).exp() * m * m * delta).sqrt();
                    if alpha > 0.0 && generated as f64 + est > STRONG_INNER_CAP as f64 {
                        break;
                    }
                    let s = match planner.next(t, m, sliding_outer.log_w[t - 1]) {
                        Ok(s) => s,
                        Err(_) => break,
                    };
                    if alpha > 0.0 && generated + s.s_t > STRONG_INNER_CAP {
                        break;
                    }
                    generated += s.s_t;
                    if let Some(g) = s.gamma_t {
                        if g < 1.0 - 1e-12 || (s.s_t as f64) / g < s.s_t as f64 - 2.0 - 1e-12 {
                            st.gamma_bound_failures += 1;
                        }
                    }
                    st.schedules += 1;
                    reached = t;
                    checker.push(s);
                }
                                st.sliding_violations += checker.finish().len();
                st.inner_total += generated;
                if alpha > 0.0 {
                    st.strong_phase_reached.push(reached);
                }
            }
        }
    }
    st
}

fn criterion_3(st: &GridStats) -> Outcome {
    let min_strong = st.strong_phase_reached.iter().copied().min().unwrap_or(0);
    outcome(
        st.outer_violations == 0 && st.sliding_violations == 0,
        format!(
            "27 grid points, {} inner schedules, {} inner steps; outer violations {}, sliding violations {}; strong-case inner schedules generated up to phase >= {} (cap {} inner steps per point)",
            st.schedules, st.inner_total, st.outer_violations, st.sliding_violations, min_strong, STRONG_INNER_CAP
        ),
    )
}

/// 50 step fixtures against active-set enumeration.
fn criterion_4() -> Outcome {
    let (mut dx, mut dl) = (0.0f64, 0.0f64);
    let mut failures = 0;
    for seed in 0..50 {
        let fx = step_fixture(seed);
        let Some((x_ref, lam_ref)) = enumerate_step(&fx) else {
            failures += 1;
            continue;
        };
        let inp = StepInput {
            pi: &fx.pi,
            nu: &fx.nu,
            g_at_center: &fx.g,
            x_under: &fx.x_under,
            x_prev: &fx.x_prev,
            eta: fx.eta,
            domain: &fx.domain,
            reg: fx.reg(),
            tol: 1e-11,
            lambda0: None,
            nu_x_under: None,
            max_iters: DEFAULT_MAX_ITERS,
        };
        match constrained_descent_step(&inp, &mut CostCounters::new()) {
            Ok(r) => {
                dx = dx.max(norm(&r.x.iter().zip(&x_ref).map(|(a, b)| a - b).collect::<Vec<_>>()));
                dl = dl.max(max_abs_diff(&r.lam, &lam_ref));
            }
            Err(_) => failures += 1,
        }
    }
    outcome(
        failures == 0 && dx <= 1e-6 && dl <= 1e-5,
        format!("max |dx| = {dx:.2e}, max |dlambda| = {dl:.2e}, failures {failures}"),
    )
}

fn criterion_5() -> Outcome {
    let mut worst = f64::INFINITY;
    for k in 1..=5 {
        for &beta in &[0.5, 1.0, 2.0] {
            for &gamma in &[0.5, 1.0, 2.0] {
                let p = NonstrongHardParams { k, beta, gamma, l: 1.0 };
                let v = min_g2_over_span(&p, k).unwrap();
                worst = worst.min(v - beta * gamma * gamma / (2.0 * k as f64 + 2.0));
            }
        }
    }
    let p = NonstrongHardParams { k: 1, beta: 1.0, gamma: 1.0, l: 1.0 };
    let at_one = min_g2_over_span(&p, 1).unwrap();
    outcome(
        worst >= -1e-10 && (at_one - 0.25).abs() <= 1e-12,
        format!("min over grid of (span minimum - floor) = {worst:.3e}; k=1 value {at_one}"),
    )
}

fn criterion_6() -> Outcome {
    let p = NonstrongHardParams { k: 120, beta: 1.0, gamma: 1.0, l: 2.0 };
    let inst = gen_nonstrong_hard(&p).unwrap();
    let x0 = vec![0.0; p.dim()];
    let (wrapped, spy) = SpanOracle::wrap(&inst, &x0).unwrap();
    // Only the final phase is logged, so query t is the oracle call of phase t.
    let opts = RunOptions { log_every: 1_000_000, ..RunOptions::default() };
    if let Err(e) = run_acgd(&wrapped, 36.0, 1.0, 100, &mut CostCounters::new(), &opts) {
        return outcome(false, format!("run failed: {e}"));
    }
    let hist = spy.discovered_history();
    let over = (1..=100).filter(|&t| hist[t] > t + 1).count();
    let viol = spy.violations().len();
    outcome(
        viol == 0 && over == 0,
        format!("span violations {viol}, phases with discovered_coords > t+1: {over}, discovered after 100 phases {}", hist[100]),
    )
}

fn criterion_7() -> Outcome {
    // Nonstrong chain, default Delta.
    let p = NonstrongHardParams { k: 10, beta: 1.0, gamma: 1.0, l: 2.0 };
    let inst = gen_nonstrong_hard(&p).unwrap();
    let r_hat = norm(&inst.meta.as_ref().unwrap().x_star);
    let params = SlidingParams { l: 36.0, r_bar: lam_norm(&inst) + 1.0, r_hat, delta: None };
    let opts = RunOptions { log_every: 1, ..RunOptions::default() };
    let tr = match run_acgd_s(&inst, &params, 800, &mut CostCounters::new(), &opts) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("nonstrong run failed: {e}")),
    };
    let (Some(a), Some(b)) = (settled_row(&tr.rows, 1e-3), settled_row(&tr.rows, 5e-4)) else {
        return outcome(false, "nonstrong run did not reach 5e-4".into());
    };
    let (a, b) = (&tr.rows[a], &tr.rows[b]);
    let oracle_ratio = b.oracle_calls as f64 / a.oracle_calls as f64;
    let matvec_ratio = b.matvecs as f64 / a.matvecs as f64;
    let ok_oracle = (oracle_ratio / 2f64.sqrt() - 1.0).abs() <= 0.2;
    let ok_matvec = (matvec_ratio / 2.0 - 1.0).abs() <= 0.3;

    // Strong chain: eps -> eps / 10.
    let q = StrongHardParams { n: 200, lbar_g: 1.0, l: 1.0, alpha: 0.25 };
    let inst = gen_strong_hard(&q).unwrap();
    let meta = inst.meta.clone().unwrap();
    let l = meta.l_f + (lam_norm(&inst) + 1.0) * meta.lbar_g;
    let r_bar = lam_norm(&inst) + 1.0;
    let params = SlidingParams { l, r_bar, r_hat: norm(&meta.x_star), delta: None };
    let tr = match run_acgd_s(&inst, &params, 80, &mut CostCounters::new(), &opts) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("strong run failed: {e}")),
    };
    let (eps_hi, eps_lo) = (1e-6, 1e-7);
    let (Some(c), Some(d)) = (settled_row(&tr.rows, eps_hi), settled_row(&tr.rows, eps_lo)) else {
        return outcome(false, "strong run did not reach 1e-7".into());
    };
    let increment = tr.rows[d].oracle_calls as f64 - tr.rows[c].oracle_calls as f64;
    let h = l.max(r_bar);
    let predicted = ((2.0 * h / q.alpha).sqrt() + 1.0) * 10f64.ln();
    let ok_strong = increment > 0.0 && increment <= 2.0 * predicted;
    outcome(
        ok_oracle && ok_matvec && ok_strong,
        format!(
            "nonstrong: oracle x{oracle_ratio:.3} (target 1.414 +/- 20%), matvecs x{matvec_ratio:.3} (target 2 +/- 30%); strong: +{increment} oracle calls per decade (predicted {predicted:.1}, limit {:.1})",
            2.0 * predicted
        ),
    )
}

fn chain_in_ball() -> ProblemInstance {
    let p = NonstrongHardParams { k: 10, beta: 1.0, gamma: 1.0, l: 2.0 };
    InstanceFile { spec: InstanceSpec::NonstrongHard(p), domain: Some(Domain::ball(vec![0.0; p.dim()], 3.0).unwrap()) }
        .build()
        .unwrap()
}

fn criterion_8() -> Outcome {
    let mut fixtures: Vec<(String, ProblemInstance, f64)> = (1..=3)
        .map(|s| (format!("random_qp seed {s}"), gen_random_qp(&RandomQpParams { n: 5, m: 3, seed: s }).unwrap(), 1e-3))
        .collect();
    fixtures.push(("chain k=10 in ball".into(), chain_in_ball(), 1e-2));
    let mut all_ok = true;
    let mut worst_ratio: f64 = 0.0;
    let mut notes = Vec::new();
    for (name, inst, eps) in &fixtures {
        let meta = inst.meta.clone().unwrap();
        let l = meta.l_f + (lam_norm(inst) + 1.0) * meta.lbar_g;
        let r_bar = lam_norm(inst) + 1.0;
        for method in [Method::Acgd, Method::AcgdS] {
            let target = if method == Method::AcgdS { l.max(r_bar) } else { l };
            let d = inst.domain.diameter().unwrap();
            let cfg = SearchConfig {
                eps: *eps,
                c: 1.0,
                r: 1.0,
                d_x: d,
                alpha: inst.reg.alpha,
                initial_guess: target / 16.0,
                method,
                max_doublings: 20,
            };
            let rep = match run_search(inst, &cfg, &mut CostCounters::new()) {
                Ok(r) => r,
                Err(e) => {
                    all_ok = false;
                    notes.push(format!("{name} {method:?}: {e}"));
                    continue;
                }
            };
            // Independent re-evaluation at the returned point.
            let s = inst.peek(&rep.solution).unwrap();
            let feas = pos_norm(&s.g_val);
            let obj = inst.objective(&s, &rep.solution);
            let verified = feas <= eps / cfg.c && obj - rep.certificate.f_under <= *eps && obj - meta.f_star <= *eps;
            let lead = match method {
                Method::Acgd => 7.0 * (target / eps).sqrt() * d,
                Method::AcgdS => 7.0 * (1.5 * target / eps).sqrt() * d,
            };
            let first = match method {
                Method::Acgd => (2.0 * cfg.initial_guess / eps).sqrt() * d + 1.0,
                Method::AcgdS => (3.0 * cfg.initial_guess / eps).sqrt() * d + 1.0,
            };
            let budget = (lead + (target / cfg.initial_guess).log2().ceil()).max(first);
            let ratio = rep.total_phases as f64 / budget;
            worst_ratio = worst_ratio.max(ratio);
            if !verified || ratio > 4.0 {
                all_ok = false;
                notes.push(format!("{name} {method:?}: verified {verified}, phases/budget {ratio:.2}"));
            }
        }
    }
    let detail = if notes.is_empty() {
        format!("8 searches verified; worst phases/budget {worst_ratio:.3} (limit 4)")
    } else {
        notes.join("; ")
    };
    outcome(all_ok, detail)
}

fn criterion_9() -> Outcome {
    let checkpoints = [1usize, 2, 3, 5, 10, 20, 50, 100, 200];
    let mut fixtures: Vec<ProblemInstance> = (0..6).map(|s| gen_random_qp(&RandomQpParams { n: 4, m: 3, seed: s }).unwrap()).collect();
    fixtures.push(chain_in_ball());
    let q = StrongHardParams { n: 40, lbar_g: 1.0, l: 1.0, alpha: 0.25 };
    fixtures.push(
        InstanceFile { spec: InstanceSpec::StrongHard(q), domain: Some(Domain::ball(vec![0.0; q.n], 2.0).unwrap()) }
            .build()
            .unwrap(),
    );
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for inst in &fixtures {
        let meta = inst.meta.clone().unwrap();
        let l = meta.l_f + (lam_norm(inst) + 1.0) * meta.lbar_g;
        for &n in &checkpoints {
            for sliding in [false, true] {
                // Strong inner loops grow geometrically with the phase index.
                if sliding && inst.reg.alpha > 0.0 && n > 50 {
                    continue;
                }
                let mut c = CostCounters::new();
                let tr = if sliding {
                    let p = SlidingParams { l, r_bar: lam_norm(inst) + 1.0, r_hat: inst.domain.diameter().unwrap(), delta: None };
                    run_acgd_s(inst, &p, n, &mut c, &RunOptions::default())
                } else {
                    run_acgd(inst, l, 1.0, n, &mut c, &RunOptions::default())
                };
                let tr = match tr {
                    Ok(t) => t,
                    Err(e) => return outcome(false, format!("run failed: {e}")),
                };
                let cert = certified_lower_bound(&tr.dual.relaxation(), &inst.domain, inst.reg, 1e-9, &mut c).unwrap();
                worst = worst.max(cert.f_under - meta.f_star);
                count += 1;
            }
        }
    }
    outcome(worst <= 1e-9, format!("{count} checkpoints, max (f_under - f_star) = {worst:.3e}"))
}

fn criterion_10(st: &GridStats) -> Outcome {
    let mut power_fail = 0;
    let mut power_points = 0;
    for i in 1..=100 {
        let x = 0.1 * i as f64;
        let steps = 200;
        for j in 0..=steps {
            let y = 1.0 + (2.0 * x - 1.0) * j as f64 / steps as f64;
            if y > 2.0 * x {
                continue;
            }
            power_points += 1;
            if (1.0 + 1.0 / x).powf(y - 3.0) > y * (1.0 + 1e-12) {
                power_fail += 1;
            }
        }
    }
    outcome(
        power_fail == 0 && st.gamma_bound_failures == 0,
        format!(
            "(1+1/x)^(y-3) <= y on {power_points} grid points: {power_fail} failures; S/Gamma >= S-2 and Gamma >= 1 over {} schedules: {} failures",
            st.schedules, st.gamma_bound_failures
        ),
    )
}

fn report(i: usize, o: &Outcome) {
    println!("criterion {i:>2}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn main() {
    let mut failed = 0;
    let mut record = |i: usize, o: Outcome| {
        report(i, &o);
        if !o.pass {
            failed += 1;
        }
    };
    record(1, timed(Some(Duration::from_secs(10)), criterion_1));
    record(2, timed(Some(Duration::from_secs(10)), criterion_2));
    let start = Instant::now();
    let grid = run_grid();
    let grid_time = start.elapsed();
    let mut c3 = criterion_3(&grid);
    c3.detail = format!("{} [{:.2}s]", c3.detail, grid_time.as_secs_f64());
    if grid_time > Duration::from_secs(5) {
        c3.pass = false;
        c3.detail.push_str(" exceeds 5s limit");
    }
    record(3, c3);
    record(4, timed(None, criterion_4));
    record(5, timed(None, criterion_5));
    record(6, timed(None, criterion_6));
    record(7, timed(None, criterion_7));
    record(8, timed(None, criterion_8));
    record(9, timed(None, criterion_9));
    record(10, timed(None, || criterion_10(&grid)));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
