//! Test-side reference computations, written independently of the library
//! solvers.

#![allow(dead_code)]

use acgd_kit::linalg::Matrix;
use acgd_kit::{Domain, Regularizer};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A constrained-step problem:
/// `min <pi, x> + alpha |x|^2/2 + eta |x - x_prev|^2/2  s.t.  nu (x - x_under) + g <= 0, x in X`.
#[derive(Clone, Debug)]
pub struct StepFixture {
    pub pi: Vec<f64>,
    pub nu: Matrix,
    pub g: Vec<f64>,
    pub x_under: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub eta: f64,
    pub alpha: f64,
    pub domain: Domain,
}

pub fn step_fixture(seed: u64) -> StepFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=5usize);
    let m = rng.gen_range(1..=3usize);
    let v = |rng: &mut ChaCha8Rng, k: usize, s: f64| (0..k).map(|_| rng.gen_range(-s..s)).collect::<Vec<f64>>();
    let pi = v(&mut rng, n, 2.0);
    let x_prev = v(&mut rng, n, 1.0);
    let x_under = v(&mut rng, n, 1.0);
    let nu = Matrix::from_row_major(m, n, v(&mut rng, m * n, 1.0));
    let boxed = rng.gen_bool(0.5);
    let domain = if boxed {
        let lower: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..-0.5)).collect();
        let upper: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        Domain::cube(lower, upper).unwrap()
    } else {
        Domain::free(n).unwrap()
    };
    // A strictly feasible anchor point keeps the linearization feasible.
    let anchor = v(&mut rng, n, 0.4);
    let g: Vec<f64> = (0..m)
        .map(|i| {
            let lin: f64 = (0..n).map(|j| nu[(i, j)] * (anchor[j] - x_under[j])).sum();
            -lin - rng.gen_range(0.01..0.5)
        })
        .collect();
    let eta = rng.gen_range(0.5..3.0);
    let alpha = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.1..1.0) };
    StepFixture {
        pi,
        nu,
        g,
        x_under,
        x_prev,
        eta,
        alpha,
        domain,
    }
}

impl StepFixture {
    pub fn reg(&self) -> Regularizer {
        Regularizer::new(self.alpha).unwrap()
    }

    /// Row form `A x <= b` of the linearized constraints.
    pub fn rows_rhs(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let m = self.nu.rows();
        let a: Vec<Vec<f64>> = (0..m).map(|i| self.nu.row(i).to_vec()).collect();
        let b: Vec<f64> = (0..m)
            .map(|i| a[i].iter().zip(&self.x_under).map(|(p, q)| p * q).sum::<f64>() - self.g[i])
            .collect();
        (a, b)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..x.len() {
            v += self.pi[i] * x[i] + 0.5 * self.alpha * x[i] * x[i] + 0.5 * self.eta * (x[i] - self.x_prev[i]).powi(2);
        }
        v
    }
}

/// Exact solution of a step fixture by enumerating which box bounds and
/// which rows are active. The Hessian is `(alpha + eta) I`, so on each
/// pattern the multipliers solve a small Gram system.
pub fn enumerate_step(fx: &StepFixture) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = fx.pi.len();
    let (a, b) = fx.rows_rhs();
    let m = a.len();
    let h = fx.alpha + fx.eta;
    let c: Vec<f64> = (0..n).map(|i| (fx.eta * fx.x_prev[i] - fx.pi[i]) / h).collect();
    let bounds = match &fx.domain {
        Domain::Box { lower, upper } => Some((lower.clone(), upper.clone())),
        Domain::Free { .. } => None,
        Domain::Ball { .. } => panic!("ball fixtures are not enumerable"),
    };
    let patterns = if bounds.is_some() { 3usize.pow(n as u32) } else { 1 };
    let tol = 1e-9;
    for pat in 0..patterns {
        // 0 free, 1 at lower, 2 at upper
        let state: Vec<u8> = (0..n).map(|i| ((pat / 3usize.pow(i as u32)) % 3) as u8).collect();
        let fixed = |i: usize| -> Option<f64> {
            let (lo, hi) = bounds.as_ref()?;
            match state[i] {
                1 => Some(lo[i]),
                2 => Some(hi[i]),
                _ => None,
            }
        };
        for subset in 0..(1usize << m) {
            let act: Vec<usize> = (0..m).filter(|i| subset >> i & 1 == 1).collect();
            let k = act.len();
            let mut lam_s = vec![0.0; k];
            if k > 0 {
                let mut gram = DMatrix::zeros(k, k);
                let mut rhs = DVector::zeros(k);
                for (p, &i) in act.iter().enumerate() {
                    let mut r = -b[i];
                    for j in 0..n {
                        r += a[i][j] * fixed(j).unwrap_or(c[j]);
                    }
                    rhs[p] = r;
                    for (q, &l) in act.iter().enumerate() {
                        gram[(p, q)] = (0..n).filter(|&j| fixed(j).is_none()).map(|j| a[i][j] * a[l][j]).sum::<f64>() / h;
                    }
                }
                let Some(sol) = gram.clone().lu().solve(&rhs) else { continue };
                if (&gram * &sol - &rhs).norm() > 1e-10 * (1.0 + rhs.norm()) {
                    continue;
                }
                lam_s = sol.iter().copied().collect();
            }
            let mut lam = vec![0.0; m];
            for (p, &i) in act.iter().enumerate() {
                lam[i] = lam_s[p];
            }
            if lam.iter().any(|v| *v < -tol) {
                continue;
            }
            let at: Vec<f64> = (0..n).map(|j| (0..m).map(|i| a[i][j] * lam[i]).sum()).collect();
            let x: Vec<f64> = (0..n).map(|j| fixed(j).unwrap_or(c[j] - at[j] / h)).collect();
            let feasible_rows = (0..m).all(|i| a[i].iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() <= b[i] + tol);
            let ok_bounds = (0..n).all(|j| {
                let grad = h * (x[j] - c[j]) + at[j];
                match (&bounds, state[j]) {
                    (Some((lo, hi)), 0) => x[j] >= lo[j] - tol && x[j] <= hi[j] + tol,
                    (_, 1) => grad >= -tol,
                    (_, 2) => grad <= tol,
                    _ => true,
                }
            });
            if feasible_rows && ok_bounds {
                return Some((x, lam.iter().map(|v| v.max(0.0)).collect()));
            }
        }
    }
    None
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (p, q)| m.max((p - q).abs()))
}
