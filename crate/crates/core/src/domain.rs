//! Feasible sets and the regularized X-projection shared by every solver.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dist_sq, is_finite, norm, sub};

/// Absolute tolerance for projection post-checks.
pub const PROJECTION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    Free { dim: usize },
    Ball { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

/// `u(x) = alpha * |x|^2 / 2`
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub alpha: f64,
}

impl Regularizer {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.alpha * crate::linalg::norm_sq(x)
    }
}

impl Domain {
    pub fn free(dim: usize) -> Result<Self> {
        let d = Domain::Free { dim };
        d.validate()?;
        Ok(d)
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let d = Domain::Ball { center, radius };
        d.validate()?;
        Ok(d)
    }

    pub fn cube(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let d = Domain::Box { lower, upper };
        d.validate()?;
        Ok(d)
    }

    /// Checks the invariants. Deserialized domains should pass through here.
    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Free { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidDomain("dimension must be at least 1".into()));
                }
            }
            Domain::Ball { center, radius } => {
                if center.is_empty() {
                    return Err(Error::InvalidDomain("dimension must be at least 1".into()));
                }
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(Error::InvalidDomain(format!("ball radius must be positive, got {radius}")));
                }
                if !is_finite(center) {
                    return Err(Error::InvalidDomain("ball center must be finite".into()));
                }
            }
            Domain::Box { lower, upper } => {
                if lower.is_empty() {
                    return Err(Error::InvalidDomain("dimension must be at least 1".into()));
                }
                check_dim(lower.len(), upper.len())?;
                if !is_finite(lower) || !is_finite(upper) {
                    return Err(Error::InvalidDomain("box bounds must be finite".into()));
                }
                if let Some(i) = (0..lower.len()).find(|&i| lower[i] > upper[i]) {
                    return Err(Error::InvalidDomain(format!(
                        "lower[{i}] = {} exceeds upper[{i}] = {}",
                        lower[i], upper[i]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Free { dim } => *dim,
            Domain::Ball { center, .. } => center.len(),
            Domain::Box { lower, .. } => lower.len(),
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, Domain::Free { .. })
    }

    /// Largest distance between two points of the set, `None` for free space.
    pub fn diameter(&self) -> Option<f64> {
        match self {
            Domain::Free { .. } => None,
            Domain::Ball { radius, .. } => Some(2.0 * radius),
            Domain::Box { lower, upper } => Some(norm(&sub(upper, lower))),
        }
    }

    /// A canonical interior-ish point: the center for bounded sets, origin otherwise.
    pub fn center(&self) -> Vec<f64> {
        match self {
            Domain::Free { dim } => vec![0.0; *dim],
            Domain::Ball { center, .. } => center.clone(),
            Domain::Box { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect()
            }
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            Domain::Free { .. } => is_finite(x),
            Domain::Ball { center, radius } => dist_sq(x, center).sqrt() <= radius + tol,
            Domain::Box { lower, upper } => {
                (0..x.len()).all(|i| x[i] >= lower[i] - tol && x[i] <= upper[i] + tol)
            }
        }
    }

    fn project_unchecked(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Domain::Free { .. } => y.to_vec(),
            Domain::Ball { center, radius } => {
                let d = sub(y, center);
                let r = norm(&d);
                if r <= *radius {
                    y.to_vec()
                } else {
                    let s = radius / r;
                    center.iter().zip(&d).map(|(c, di)| c + s * di).collect()
                }
            }
            Domain::Box { lower, upper } => y
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| v.clamp(*l, *u))
                .collect(),
        }
    }

    /// Euclidean projection onto the set.
    pub fn euclidean_project(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), y.len())?;
        Ok(self.project_unchecked(y))
    }

    /// `argmin_{x in X} <y, x> + alpha |x|^2 / 2 + eta |x - xbar|^2 / 2`.
    ///
    /// With `eta + alpha = 0` the problem is linear; it is solved at a vertex
    /// (box) or boundary point (ball). Ties in a zero direction fall back to the
    /// projection of `xbar`.
    pub fn x_projection(&self, reg: Regularizer, y: &[f64], xbar: &[f64], eta: f64) -> Result<Vec<f64>> {
        check_dim(self.dim(), y.len())?;
        check_dim(self.dim(), xbar.len())?;
        if !(eta >= 0.0) {
            return Err(Error::InvalidParameter(format!("eta must be >= 0, got {eta}")));
        }
        let w = eta + reg.alpha;
        if w > 0.0 {
            let p: Vec<f64> = y.iter().zip(xbar).map(|(yi, xi)| (eta * xi - yi) / w).collect();
            return Ok(self.project_unchecked(&p));
        }
        match self {
            Domain::Free { .. } => Err(Error::UnboundedSubproblem),
            Domain::Ball { center, radius } => {
                let ny = norm(y);
                if ny == 0.0 {
                    Ok(self.project_unchecked(xbar))
                } else {
                    Ok(center.iter().zip(y).map(|(c, yi)| c - radius * yi / ny).collect())
                }
            }
            Domain::Box { lower, upper } => Ok((0..y.len())
                .map(|i| {
                    if y[i] > 0.0 {
                        lower[i]
                    } else if y[i] < 0.0 {
                        upper[i]
                    } else {
                        xbar[i].clamp(lower[i], upper[i])
                    }
                })
                .collect()),
        }
    }

    /// Norm of the projected-gradient map `x - P(x - grad)`; zero exactly at
    /// minimizers of a convex function with gradient `grad` at `x`.
    pub fn stationarity_residual(&self, x: &[f64], grad: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), grad.len())?;
        let step: Vec<f64> = x.iter().zip(grad).map(|(a, b)| a - b).collect();
        Ok(dist_sq(x, &self.project_unchecked(&step)).sqrt())
    }
}
