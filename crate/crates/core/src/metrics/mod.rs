//! Discrepancies between discrete distributions.
//!
//! Wasserstein-p, the `LP_eps` transport functional and the Levy-Prokhorov
//! metric are all computed from exact transportation problems; KL and total
//! variation work on weight vectors over a shared, index-aligned support.

pub mod transport;

use serde::{Deserialize, Serialize};

use crate::distribution::{check_weights, DiscreteDistribution};
use crate::error::{Error, Result};

/// Feature-space norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Linf,
    L2,
    L1,
}

impl Norm {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Norm::Linf => diffs.fold(0.0, f64::max),
            Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Norm::L1 => diffs.sum(),
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linf" => Ok(Norm::Linf),
            "l2" => Ok(Norm::L2),
            "l1" => Ok(Norm::L1),
            other => Err(Error::param("norm", format!("unknown norm `{other}`"))),
        }
    }
}

/// Pairwise ground costs `d(z_i, z'_j)` between two supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: entries.len(),
            });
        }
        if entries.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(Error::param("cost", "entries must be finite and nonnegative"));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let entries = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Self::new(rows, cols, entries)
    }

    pub fn from_points(a: &[Vec<f64>], b: &[Vec<f64>], norm: Norm) -> Result<Self> {
        Self::from_fn(a.len(), b.len(), |i, j| norm.distance(&a[i], &b[j]))
    }

    /// Square cost matrix of a finite space.
    pub fn pairwise(points: &[Vec<f64>], norm: Norm) -> Result<Self> {
        Self::from_points(points, points, norm)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Largest entry; the diameter when the matrix describes a finite space.
    pub fn diam(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest off-diagonal entry of a square matrix.
    pub fn min_offdiag(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.rows {
            for j in 0..self.cols {
                if i != j {
                    best = best.min(self.get(i, j));
                }
            }
        }
        best
    }

    pub fn transposed(&self) -> Self {
        let entries = (0..self.rows * self.cols)
            .map(|k| self.get(k % self.rows, k / self.rows))
            .collect();
        Self {
            rows: self.cols,
            cols: self.rows,
            entries,
        }
    }

    fn check_shape(&self, mu: &[f64], nu: &[f64]) -> Result<()> {
        if mu.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                got: mu.len(),
            });
        }
        if nu.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: nu.len(),
            });
        }
        Ok(())
    }
}

/// `W_p(mu, nu)` computed as an exact transportation problem.
pub fn wasserstein_p(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cost: &CostMatrix,
    p: u32,
) -> Result<f64> {
    wasserstein_p_weights(mu.weights(), nu.weights(), cost, p)
}

pub fn wasserstein_p_weights(mu: &[f64], nu: &[f64], cost: &CostMatrix, p: u32) -> Result<f64> {
    if p < 1 {
        return Err(Error::param("p", "Wasserstein order must be >= 1"));
    }
    check_weights(mu)?;
    check_weights(nu)?;
    cost.check_shape(mu, nu)?;
    let powered: Vec<f64> = cost.entries.iter().map(|d| d.powi(p as i32)).collect();
    let plan = transport::solve(mu, nu, &powered)?;
    Ok(plan.cost.max(0.0).powf(1.0 / p as f64))
}

/// `KL(mu || nu) = sum_{mu_i > 0} mu_i ln(mu_i / nu_i)`, infinite when `mu`
/// charges a point that `nu` does not.
pub fn kl_divergence(mu: &[f64], nu: &[f64]) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(Error::LengthMismatch {
            left: mu.len(),
            right: nu.len(),
        });
    }
    let mut total = 0.0;
    for (&a, &b) in mu.iter().zip(nu) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            total += a * (a / b).ln();
        }
    }
    Ok(total.max(0.0))
}

pub fn tv_distance(mu: &[f64], nu: &[f64]) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(Error::LengthMismatch {
            left: mu.len(),
            right: nu.len(),
        });
    }
    Ok(0.5 * mu.iter().zip(nu).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Least mass that any coupling must move farther than `eps`.
pub fn lp_eps(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cost: &CostMatrix,
    eps: f64,
) -> Result<f64> {
    lp_eps_weights(mu.weights(), nu.weights(), cost, eps)
}

pub fn lp_eps_weights(mu: &[f64], nu: &[f64], cost: &CostMatrix, eps: f64) -> Result<f64> {
    check_weights(mu)?;
    check_weights(nu)?;
    cost.check_shape(mu, nu)?;
    let indicator: Vec<f64> = cost
        .entries
        .iter()
        .map(|&d| if d > eps { 1.0 } else { 0.0 })
        .collect();
    Ok(transport::solve(mu, nu, &indicator)?.cost.clamp(0.0, 1.0))
}

/// Bisection tolerance of [`lp_metric`].
pub const LP_TOL: f64 = 1e-12;

/// Levy-Prokhorov metric `inf { t >= 0 : LP_t(mu, nu) <= t }`.
pub fn lp_metric(mu: &DiscreteDistribution, nu: &DiscreteDistribution, cost: &CostMatrix) -> Result<f64> {
    lp_metric_weights(mu.weights(), nu.weights(), cost)
}

pub fn lp_metric_weights(mu: &[f64], nu: &[f64], cost: &CostMatrix) -> Result<f64> {
    if lp_eps_weights(mu, nu, cost, 0.0)? <= 0.0 {
        return Ok(0.0);
    }
    // t -> LP_t - t is right-continuous and strictly decreasing, and
    // LP_t <= 1 <= t at the upper end of the bracket.
    let mut lo = 0.0;
    let mut hi = cost.diam().max(1.0);
    while hi - lo > LP_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if lp_eps_weights(mu, nu, cost, mid)? <= mid {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
