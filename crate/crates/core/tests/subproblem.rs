mod common;

use acgd_kit::linalg::Matrix;
use acgd_kit::oracle::CostCounters;
use acgd_kit::subproblem::*;
use acgd_kit::{Domain, Error, Regularizer};
use common::*;

fn solve(fx: &StepFixture) -> acgd_kit::Result<StepResult> {
    let mut c = CostCounters::new();
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
    constrained_descent_step(&inp, &mut c)
}

#[test]
fn step_matches_enumeration_on_many_fixtures() {
    let mut active_seen = 0;
    for seed in 100..300 {
        let fx = step_fixture(seed);
        let (x_ref, lam_ref) = enumerate_step(&fx).expect("feasible fixture");
        let got = solve(&fx).unwrap();
        assert!(max_abs_diff(&got.x, &x_ref) <= 1e-6, "seed {seed}: x {:?} vs {:?}", got.x, x_ref);
        assert!(max_abs_diff(&got.lam, &lam_ref) <= 1e-5, "seed {seed}: lam {:?} vs {:?}", got.lam, lam_ref);
        if lam_ref.iter().any(|v| *v > 1e-6) {
            active_seen += 1;
        }
    }
    // The fixtures must exercise active constraints, not just free minimizers.
    assert!(active_seen > 40, "only {active_seen} fixtures had active rows");
}

#[test]
fn step_is_no_worse_than_feasible_samples() {
    for seed in 0..30 {
        let fx = step_fixture(seed);
        let got = solve(&fx).unwrap();
        let (a, b) = fx.rows_rhs();
        let f_star = fx.objective(&got.x);
        // Points on segments between x and the anchor region stay feasible.
        for k in 0..20 {
            let t = k as f64 / 20.0;
            let z: Vec<f64> = got.x.iter().map(|v| v * (1.0 - t)).collect();
            let feas = (0..a.len()).all(|i| a[i].iter().zip(&z).map(|(p, q)| p * q).sum::<f64>() <= b[i])
                && fx.domain.contains(&z, 0.0);
            if feas {
                assert!(fx.objective(&z) >= f_star - 1e-9);
            }
        }
    }
}

#[test]
fn slack_constraints_give_zero_multiplier() {
    // g far below zero: the step is the plain prox point.
    let nu = Matrix::from_rows(&[vec![1.0, 1.0]]);
    let domain = Domain::free(2).unwrap();
    let inp = StepInput {
        pi: &[1.0, -1.0],
        nu: &nu,
        g_at_center: &[-100.0],
        x_under: &[0.0, 0.0],
        x_prev: &[0.0, 0.0],
        eta: 2.0,
        domain: &domain,
        reg: Regularizer::default(),
        tol: 1e-12,
        lambda0: None,
        nu_x_under: None,
        max_iters: 1000,
    };
    let r = constrained_descent_step(&inp, &mut CostCounters::new()).unwrap();
    assert_eq!(r.lam, vec![0.0]);
    assert!(max_abs_diff(&r.x, &[-0.5, 0.5]) < 1e-14);
}

#[test]
fn infeasible_linearization_is_reported() {
    // x >= 2 and x <= 1 cannot both hold.
    let nu = Matrix::from_rows(&[vec![-1.0], vec![1.0]]);
    let domain = Domain::free(1).unwrap();
    let inp = StepInput {
        pi: &[0.0],
        nu: &nu,
        g_at_center: &[2.0, -1.0],
        x_under: &[0.0],
        x_prev: &[0.0],
        eta: 1.0,
        domain: &domain,
        reg: Regularizer::default(),
        tol: 1e-10,
        lambda0: None,
        nu_x_under: None,
        max_iters: DEFAULT_MAX_ITERS,
    };
    let r = constrained_descent_step(&inp, &mut CostCounters::new());
    assert!(matches!(r, Err(Error::InfeasibleStep(_)) | Err(Error::ToleranceNotReached { .. })), "{r:?}");
}

#[test]
fn warm_start_reaches_same_point() {
    let fx = step_fixture(7);
    let cold = solve(&fx).unwrap();
    let mut c = CostCounters::new();
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
        lambda0: Some(&cold.lam),
        nu_x_under: None,
        max_iters: DEFAULT_MAX_ITERS,
    };
    let warm = constrained_descent_step(&inp, &mut c).unwrap();
    assert!(max_abs_diff(&warm.x, &cold.x) < 1e-8);
    assert!(warm.inner_iters <= cold.inner_iters);
}

#[test]
fn lower_bound_never_exceeds_constrained_minimum() {
    // min <pi, x> over the unit box subject to a x <= b, compared with the
    // step solution at vanishing prox weight via a fine grid (n = 2).
    let domain = Domain::cube(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let rows = Matrix::from_rows(&[vec![1.0, 2.0]]);
    let rel = Relaxation {
        obj_linear: vec![-1.0, -1.0],
        obj_const: 0.5,
        rows,
        consts: vec![-1.0],
        active: vec![true],
        multiplier_hint: None,
    };
    let mut best = f64::INFINITY;
    let k = 400;
    for i in 0..=k {
        for j in 0..=k {
            let x = -1.0 + 2.0 * i as f64 / k as f64;
            let y = -1.0 + 2.0 * j as f64 / k as f64;
            if x + 2.0 * y - 1.0 <= 0.0 {
                best = best.min(0.5 - x - y);
            }
        }
    }
    let cert = certified_lower_bound(&rel, &domain, Regularizer::default(), 1e-10, &mut CostCounters::new()).unwrap();
    assert!(cert.f_under <= best + 1e-12);
    // x = 1, y = 0 is optimal with value -0.5; the bound is tight.
    assert!((best + 0.5).abs() < 1e-12);
    assert!(cert.f_under >= best - 1e-6, "bound {} far from {best}", cert.f_under);
}
