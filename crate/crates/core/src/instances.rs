//! Generators: the two chain-structured hard instances and small random QPs,
//! each carrying a reference optimum.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, Regularizer};
use crate::error::{Error, Result};
use crate::linalg::{dot, solve_tridiagonal, Matrix};
use crate::oracle::{InstanceMeta, ProblemInstance, QuadForm, QuadPiece, QuadraticOracle};
use crate::reference::SmallQp;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonstrongHardParams {
    pub k: usize,
    pub beta: f64,
    pub gamma: f64,
    pub l: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongHardParams {
    pub n: usize,
    #[serde(rename = "Lbar_g")]
    pub lbar_g: f64,
    pub l: f64,
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomQpParams {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
}

/// Generator recipe as stored in instance files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "snake_case")]
pub enum InstanceSpec {
    NonstrongHard(NonstrongHardParams),
    StrongHard(StrongHardParams),
    RandomQp(RandomQpParams),
}

impl InstanceSpec {
    pub fn build(&self) -> Result<ProblemInstance> {
        match self {
            InstanceSpec::NonstrongHard(p) => gen_nonstrong_hard(p),
            InstanceSpec::StrongHard(p) => gen_strong_hard(p),
            InstanceSpec::RandomQp(p) => gen_random_qp(p),
        }
    }

    pub fn label(&self) -> String {
        match self {
            InstanceSpec::NonstrongHard(p) => format!("nonstrong_hard_k{}", p.k),
            InstanceSpec::StrongHard(p) => format!("strong_hard_n{}", p.n),
            InstanceSpec::RandomQp(p) => format!("random_qp_n{}_m{}_s{}", p.n, p.m, p.seed),
        }
    }
}

/// On-disk instance: the generator recipe plus an optional domain that
/// replaces the generator's. The replacement must contain the reference
/// optimum, which then stays optimal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(flatten)]
    pub spec: InstanceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
}

impl InstanceFile {
    pub fn build(&self) -> Result<ProblemInstance> {
        let inst = self.spec.build()?;
        let Some(domain) = &self.domain else {
            return Ok(inst);
        };
        domain.validate()?;
        if domain.dim() != inst.dim() {
            return Err(Error::DimensionMismatch {
                expected: inst.dim(),
                got: domain.dim(),
            });
        }
        let mut meta = inst.meta.clone();
        if let Some(m) = meta.as_mut() {
            let p = domain.euclidean_project(&m.x_star)?;
            let off = crate::linalg::dist_sq(&p, &m.x_star).sqrt();
            if off > 1e-9 * (1.0 + crate::linalg::norm(&m.x_star)) {
                return Err(Error::InvalidDomain(format!(
                    "domain excludes the reference optimum (distance {off:e})"
                )));
            }
            m.d_x = domain.diameter();
        }
        let mut out = ProblemInstance::new(inst.oracle.clone(), domain.clone(), inst.reg)?;
        out.meta = meta;
        Ok(out)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

impl NonstrongHardParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        positive("beta", self.beta)?;
        positive("gamma", self.gamma)?;
        positive("l", self.l)
    }

    pub fn dim(&self) -> usize {
        2 * self.k + 1
    }

    /// `((2k+1)/(2k+2)) * gamma^2 * beta`
    fn offset(&self) -> f64 {
        let k = self.k as f64;
        (2.0 * k + 1.0) / (2.0 * k + 2.0) * self.gamma * self.gamma * self.beta
    }

    pub fn x_star(&self) -> Vec<f64> {
        let denom = 2.0 * self.k as f64 + 2.0;
        (1..=self.dim()).map(|i| self.gamma * (1.0 - i as f64 / denom)).collect()
    }

    fn oracle(&self) -> QuadraticOracle {
        let n = self.dim();
        let mut e1 = vec![0.0; n];
        e1[0] = 1.0;
        let chain = QuadForm::Chain { scale: 2.0 * self.beta };
        QuadraticOracle {
            n,
            objective: QuadPiece::affine(e1.iter().map(|v| -2.0 * self.l * self.gamma * self.beta * v).collect(), 0.0),
            constraints: vec![
                QuadPiece {
                    hess: chain.clone(),
                    lin: vec![0.0; n],
                    constant: -self.offset(),
                },
                QuadPiece {
                    hess: chain,
                    lin: e1.iter().map(|v| -2.0 * self.beta * self.gamma * v).collect(),
                    constant: self.offset(),
                },
            ],
        }
    }
}

/// Chain instance whose only feasible point is `x*`; `g2 >= 0` everywhere.
pub fn gen_nonstrong_hard(p: &NonstrongHardParams) -> Result<ProblemInstance> {
    p.validate()?;
    let x_star = p.x_star();
    let f_star = -2.0 * p.l * p.gamma * p.beta * x_star[0];
    let inst = ProblemInstance::new(Arc::new(p.oracle()), Domain::free(p.dim())?, Regularizer::default())?;
    Ok(inst.with_meta(InstanceMeta {
        x_star,
        lambda_star: vec![p.l, 0.0],
        f_star,
        l_f: 0.0,
        lbar_g: 12.0 * p.beta,
        d_x: None,
    }))
}

/// Exact minimum of `g2` over vectors supported on the first `j` coordinates.
pub fn min_g2_over_span(p: &NonstrongHardParams, j: usize) -> Result<f64> {
    p.validate()?;
    if j == 0 || j > p.dim() {
        return Err(Error::InvalidParameter(format!("j must lie in 1..={}, got {j}", p.dim())));
    }
    let mut rhs = vec![0.0; j];
    rhs[0] = p.gamma;
    let xj = solve_tridiagonal(&vec![-1.0; j - 1], &vec![2.0; j], &vec![-1.0; j - 1], &rhs);
    let mut x = vec![0.0; p.dim()];
    x[..j].copy_from_slice(&xj);
    use crate::oracle::FirstOrderOracle;
    Ok(p.oracle().sample(&x).g_val[1])
}

impl StrongHardParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        positive("Lbar_g", self.lbar_g)?;
        positive("alpha", self.alpha)?;
        if !(self.l >= 1.0) || !self.l.is_finite() {
            return Err(Error::InvalidParameter(format!("l must be >= 1, got {}", self.l)));
        }
        if self.alpha > self.lbar_g * self.l {
            return Err(Error::InvalidParameter(format!(
                "alpha = {} exceeds Lbar_g * l = {}",
                self.alpha,
                self.lbar_g * self.l
            )));
        }
        Ok(())
    }

    /// `alpha / (Lbar_g * l)`
    pub fn gamma(&self) -> f64 {
        self.alpha / (self.lbar_g * self.l)
    }

    /// `(1 - sqrt(gamma)) / (1 + sqrt(gamma))`
    pub fn delta(&self) -> f64 {
        let s = self.gamma().sqrt();
        (1.0 - s) / (1.0 + s)
    }

    pub fn x_bar(&self) -> Vec<f64> {
        let d = self.delta();
        let mut out = Vec::with_capacity(self.n);
        let mut v = 1.0;
        for _ in 0..self.n {
            v *= d;
            out.push(v);
        }
        out
    }

    fn chain_coef(&self) -> f64 {
        (self.lbar_g - self.alpha / self.l) / 8.0
    }

    fn pull(&self) -> f64 {
        (self.l * self.lbar_g - self.alpha) / 4.0
    }

    fn h(&self, x: &[f64]) -> f64 {
        self.chain_coef() * dot(x, &QuadForm::Chain { scale: 1.0 }.apply(x))
    }

    /// Minimizer of the Lagrangian for a fixed multiplier.
    fn lagrangian_argmin(&self, lambda: f64) -> Vec<f64> {
        let n = self.n;
        let c = self.chain_coef();
        let mut rhs = vec![0.0; n];
        rhs[0] = self.pull();
        let off = vec![-2.0 * lambda * c; n.saturating_sub(1)];
        solve_tridiagonal(&off, &vec![self.alpha + 4.0 * lambda * c; n], &off, &rhs)
    }

    /// Reference optimum by bisection on the multiplier of the single
    /// constraint.
    pub fn reference_solution(&self) -> (Vec<f64>, f64) {
        let level = self.h(&self.x_bar());
        let g = |lam: f64| self.h(&self.lagrangian_argmin(lam)) - level;
        if g(0.0) <= 0.0 {
            return (self.lagrangian_argmin(0.0), 0.0);
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        while g(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (self.lagrangian_argmin(hi), hi)
    }
}

/// Finite truncation of the strongly convex chain instance.
pub fn gen_strong_hard(p: &StrongHardParams) -> Result<ProblemInstance> {
    p.validate()?;
    let n = p.n;
    let mut lin = vec![0.0; n];
    lin[0] = -p.pull();
    let oracle = QuadraticOracle {
        n,
        objective: QuadPiece::affine(lin.clone(), 0.0),
        constraints: vec![QuadPiece {
            hess: QuadForm::Chain {
                scale: 2.0 * p.chain_coef(),
            },
            lin: vec![0.0; n],
            constant: -p.h(&p.x_bar()),
        }],
    };
    let reg = Regularizer::new(p.alpha)?;
    let (x_star, lam) = p.reference_solution();
    let f_star = dot(&lin, &x_star) + reg.value(&x_star);
    let inst = ProblemInstance::new(Arc::new(oracle), Domain::free(n)?, reg)?;
    Ok(inst.with_meta(InstanceMeta {
        x_star,
        lambda_star: vec![lam],
        f_star,
        l_f: 0.0,
        lbar_g: p.lbar_g,
        d_x: None,
    }))
}

/// Convex QP with affine constraints `rows * x <= rhs` and a reference optimum
/// from enumeration. Ball domains get no reference here; callers must ensure
/// the optimum is interior or supply the meta themselves.
pub fn qp_instance(hess: Matrix, lin: Vec<f64>, rows: Matrix, rhs: Vec<f64>, domain: Domain) -> Result<ProblemInstance> {
    let n = lin.len();
    if hess.rows() != n || hess.cols() != n || rows.cols() != n || rows.rows() != rhs.len() {
        return Err(Error::InvalidParameter("inconsistent QP shapes".into()));
    }
    let bounds = match &domain {
        Domain::Box { lower, upper } => Some((lower.clone(), upper.clone())),
        _ => None,
    };
    let qp = SmallQp {
        hess: hess.clone(),
        lin: lin.clone(),
        rows: rows.clone(),
        rhs: rhs.clone(),
        bounds,
    };
    let sol = qp
        .solve_by_enumeration()
        .ok_or_else(|| Error::InvalidParameter("no KKT point found (infeasible or degenerate QP)".into()))?;
    let oracle = quadratic_oracle(&hess, &lin, &rows, &rhs);
    let l_f = max_eigenvalue(&hess);
    let f_star = 0.5 * dot(&sol.x, &hess.mul_vec(&sol.x)) + dot(&lin, &sol.x);
    let d_x = domain.diameter();
    let inst = ProblemInstance::new(Arc::new(oracle), domain, Regularizer::default())?;
    Ok(inst.with_meta(InstanceMeta {
        x_star: sol.x,
        lambda_star: sol.lambda,
        f_star,
        l_f,
        lbar_g: 0.0,
        d_x,
    }))
}

fn quadratic_oracle(hess: &Matrix, lin: &[f64], rows: &Matrix, rhs: &[f64]) -> QuadraticOracle {
    QuadraticOracle {
        n: lin.len(),
        objective: QuadPiece {
            hess: QuadForm::Dense(hess.clone()),
            lin: lin.to_vec(),
            constant: 0.0,
        },
        constraints: (0..rhs.len())
            .map(|i| QuadPiece::affine(rows.row(i).to_vec(), -rhs[i]))
            .collect(),
    }
}

pub fn max_eigenvalue(sym: &Matrix) -> f64 {
    sym.to_nalgebra()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |a, v| a.max(*v))
}

impl RandomQpParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > 6 {
            return Err(Error::InvalidParameter(format!("n must lie in 1..=6, got {}", self.n)));
        }
        if self.m > 3 {
            return Err(Error::InvalidParameter(format!("m must be at most 3, got {}", self.m)));
        }
        Ok(())
    }
}

const MAX_REDRAWS: u64 = 100;

/// Seeded random QP on a box or ball that strictly contains the optimum.
/// Degenerate draws are redrawn with the next seed.
pub fn gen_random_qp(p: &RandomQpParams) -> Result<ProblemInstance> {
    p.validate()?;
    for attempt in 0..MAX_REDRAWS {
        if let Some(inst) = draw_random_qp(p.n, p.m, p.seed.wrapping_add(attempt)) {
            return Ok(inst);
        }
    }
    Err(Error::InvalidParameter(format!(
        "no nondegenerate QP in {MAX_REDRAWS} draws from seed {}",
        p.seed
    )))
}

fn draw_random_qp(n: usize, m: usize, seed: u64) -> Option<ProblemInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] = rng.gen_range(-1.0..1.0);
        }
    }
    let mut hess = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            hess[(i, j)] = (0..n).map(|r| b[(r, i)] * b[(r, j)]).sum::<f64>() + if i == j { 0.5 } else { 0.0 };
        }
    }
    let lin: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x_unc = hess
        .to_nalgebra()
        .lu()
        .solve(&nalgebra::DVector::from_column_slice(&lin))?
        .iter()
        .map(|v| -v)
        .collect::<Vec<f64>>();
    let mut rows = Matrix::zeros(m, n);
    let mut rhs = vec![0.0; m];
    for i in 0..m {
        for j in 0..n {
            rows[(i, j)] = rng.gen_range(-1.0..1.0);
        }
        rhs[i] = dot(rows.row(i), &x_unc) - rng.gen_range(-0.5..1.0);
    }
    let qp = SmallQp {
        hess: hess.clone(),
        lin: lin.clone(),
        rows: rows.clone(),
        rhs: rhs.clone(),
        bounds: None,
    };
    let sol = qp.solve_by_enumeration()?;
    if sol.degenerate {
        return None;
    }
    let domain = if rng.gen_bool(0.5) {
        let lower = sol.x.iter().map(|v| v - rng.gen_range(0.5..2.0)).collect();
        let upper = sol.x.iter().map(|v| v + rng.gen_range(0.5..2.0)).collect();
        Domain::cube(lower, upper).ok()?
    } else {
        let radius = rng.gen_range(1.0..3.0);
        let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dn = crate::linalg::norm(&dir).max(1e-12);
        let off = rng.gen_range(0.0..0.5) * radius;
        let center = sol.x.iter().zip(&dir).map(|(x, d)| x + off * d / dn).collect();
        Domain::ball(center, radius).ok()?
    };
    let f_star = 0.5 * dot(&sol.x, &hess.mul_vec(&sol.x)) + dot(&lin, &sol.x);
    let d_x = domain.diameter();
    let inst = ProblemInstance::new(Arc::new(quadratic_oracle(&hess, &lin, &rows, &rhs)), domain, Regularizer::default())
        .ok()?
        .with_meta(InstanceMeta {
            x_star: sol.x,
            lambda_star: sol.lambda,
            f_star,
            l_f: max_eigenvalue(&hess),
            lbar_g: 0.0,
            d_x,
        });
    match inst.kkt_report() {
        Some(Ok(r)) if r.passes() => Some(inst),
        _ => None,
    }
}
