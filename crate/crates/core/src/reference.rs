//! Brute-force reference solvers used to produce known optima: exhaustive
//! active-set enumeration for small QPs with optional box bounds.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{dot, Matrix};

/// `min x^T H x / 2 + <lin, x>  s.t.  rows * x <= rhs,  lower <= x <= upper`
#[derive(Clone, Debug)]
pub struct SmallQp {
    pub hess: Matrix,
    pub lin: Vec<f64>,
    pub rows: Matrix,
    pub rhs: Vec<f64>,
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    /// More than one multiplier vector satisfied the KKT conditions.
    pub degenerate: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

const ACCEPT_TOL: f64 = 1e-10;

impl SmallQp {
    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.rhs.len()
    }

    /// Enumerates every bound pattern and every subset of active rows, solving
    /// the equality-constrained KKT system for each. Exponential; meant for
    /// `n <= 6`, `m <= 3`. Returns `None` when no pattern satisfies KKT.
    pub fn solve_by_enumeration(&self) -> Option<QpSolution> {
        let n = self.dim();
        let m = self.num_constraints();
        let patterns = if self.bounds.is_some() { 3usize.pow(n as u32) } else { 1 };
        let scale = 1.0
            + self.lin.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
            + self.rhs.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let tol = ACCEPT_TOL * scale;
        let mut found: Vec<QpSolution> = Vec::new();
        for pat in 0..patterns {
            let state = decode_pattern(pat, n, self.bounds.is_some());
            for subset in 0..(1usize << m) {
                let active: Vec<usize> = (0..m).filter(|i| subset >> i & 1 == 1).collect();
                if let Some((x, lam)) = self.solve_pattern(&state, &active) {
                    if self.accepts(&state, &active, &x, &lam, tol) {
                        let mut lambda = vec![0.0; m];
                        for (k, &i) in active.iter().enumerate() {
                            lambda[i] = lam[k].max(0.0);
                        }
                        found.push(QpSolution {
                            x,
                            lambda,
                            degenerate: false,
                        });
                    }
                }
            }
        }
        let mut best = found.first()?.clone();
        best.degenerate = found.iter().any(|s| {
            s.lambda
                .iter()
                .zip(&best.lambda)
                .any(|(a, b)| (a - b).abs() > 1e-8 * (1.0 + b.abs()))
        });
        Some(best)
    }

    fn solve_pattern(&self, state: &[Bound], active: &[usize]) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.dim();
        let mut x = vec![0.0; n];
        if let Some((lo, hi)) = &self.bounds {
            for j in 0..n {
                match state[j] {
                    Bound::Lower => x[j] = lo[j],
                    Bound::Upper => x[j] = hi[j],
                    Bound::Free => {}
                }
            }
        }
        let free: Vec<usize> = (0..n).filter(|&j| state[j] == Bound::Free).collect();
        let nf = free.len();
        let na = active.len();
        if nf + na == 0 {
            return Some((x, vec![]));
        }
        let size = nf + na;
        let mut kkt = DMatrix::<f64>::zeros(size, size);
        let mut rhs = DVector::<f64>::zeros(size);
        let fixed_contrib = self.hess.mul_vec(&x);
        for (a, &j) in free.iter().enumerate() {
            for (b, &l) in free.iter().enumerate() {
                kkt[(a, b)] = self.hess[(j, l)];
            }
            rhs[a] = -self.lin[j] - fixed_contrib[j];
        }
        for (k, &i) in active.iter().enumerate() {
            let row = self.rows.row(i);
            for (a, &j) in free.iter().enumerate() {
                kkt[(nf + k, a)] = row[j];
                kkt[(a, nf + k)] = row[j];
            }
            rhs[nf + k] = self.rhs[i] - dot(row, &x);
        }
        let sol = kkt.clone().lu().solve(&rhs)?;
        if !sol.iter().all(|v| v.is_finite()) {
            return None;
        }
        let resid = (&kkt * &sol - &rhs).amax();
        if resid > 1e-9 * (1.0 + rhs.amax()) {
            return None;
        }
        for (a, &j) in free.iter().enumerate() {
            x[j] = sol[a];
        }
        let lam = (0..na).map(|k| sol[nf + k]).collect();
        Some((x, lam))
    }

    fn accepts(&self, state: &[Bound], active: &[usize], x: &[f64], lam: &[f64], tol: f64) -> bool {
        if lam.iter().any(|l| *l < -tol) {
            return false;
        }
        for i in 0..self.num_constraints() {
            if dot(self.rows.row(i), x) - self.rhs[i] > tol {
                return false;
            }
        }
        let mut full_lam = vec![0.0; self.num_constraints()];
        for (k, &i) in active.iter().enumerate() {
            full_lam[i] = lam[k];
        }
        let mut grad = self.hess.mul_vec(x);
        for j in 0..grad.len() {
            grad[j] += self.lin[j];
        }
        let rl = self.rows.tr_mul_vec(&full_lam);
        if let Some((lo, hi)) = &self.bounds {
            for j in 0..x.len() {
                let r = grad[j] + rl[j];
                match state[j] {
                    Bound::Free => {
                        if x[j] < lo[j] - tol || x[j] > hi[j] + tol {
                            return false;
                        }
                    }
                    Bound::Lower => {
                        if r < -tol {
                            return false;
                        }
                    }
                    Bound::Upper => {
                        if r > tol {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }
}

fn decode_pattern(mut pat: usize, n: usize, bounded: bool) -> Vec<Bound> {
    let mut out = vec![Bound::Free; n];
    if !bounded {
        return out;
    }
    for slot in out.iter_mut() {
        *slot = match pat % 3 {
            0 => Bound::Free,
            1 => Bound::Lower,
            _ => Bound::Upper,
        };
        pat /= 3;
    }
    out
}
