//! Brute-force evaluation of the statistically robust loss on finite spaces.
//!
//! The robust loss is
//!
//! ```text
//! sup { E_{D'}[L] : exists D'' with W_p(D_n, D'') <= eps and KL(D'' || D') <= gamma }
//! ```
//!
//! [`AmbiguityGrid`] enumerates both `D''` and `D'` on a regular simplex grid
//! (boundary points included), so the supremum is witnessed up to grid
//! resolution. [`dual_value`] evaluates the three-variable dual
//!
//! ```text
//! inf_{lambda, beta >= 0, eta >= max L} lambda eps^p + E_{D_n}[phi(lambda, beta, eta, z)]
//! phi = max_xi { beta ln(beta / (eta - L(xi))) + (gamma - 1) beta + eta - lambda d^p(z, xi) }
//! ```
//!
//! with the inner supremum taken by enumeration over the space. Both are
//! desk-scale ground truth for the training-path code, not production solvers.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distribution::{check_weights, AmbiguityParams};
use crate::error::{Error, Result};
use crate::metrics::{wasserstein_p_weights, CostMatrix};
use crate::simplex;

/// Largest number of `(D'', D')` grid pairs an enumeration may visit.
pub const MAX_GRID_PAIRS: u128 = 200_000_000;

/// Reachable points mixed pairwise when refining the maxmin value.
const MIX_CANDIDATES: usize = 200;

const FEAS_TOL: f64 = 1e-12;

/// A finite sample space with fixed losses and a base (empirical) distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteInstance {
    pub cost: CostMatrix,
    pub losses: Vec<f64>,
    pub base: Vec<f64>,
    pub params: AmbiguityParams,
}

impl FiniteInstance {
    pub fn new(cost: CostMatrix, losses: Vec<f64>, base: Vec<f64>, params: AmbiguityParams) -> Result<Self> {
        let inst = Self {
            cost,
            losses,
            base,
            params,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.losses.len();
        if m < 2 {
            return Err(Error::param("space", "need at least two points"));
        }
        if self.cost.rows() != m || self.cost.cols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: self.cost.rows(),
            });
        }
        if self.losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::param("losses", "must be finite and nonnegative"));
        }
        if self.base.len() != m {
            return Err(Error::LengthMismatch {
                left: m,
                right: self.base.len(),
            });
        }
        check_weights(&self.base)?;
        self.params.validate()
    }

    pub fn max_loss(&self) -> f64 {
        self.losses.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn base_mean(&self) -> f64 {
        self.base.iter().zip(&self.losses).map(|(w, l)| w * l).sum()
    }

    /// Short content hash used to key regression records.
    pub fn hash(&self, grid_res: usize) -> String {
        let mut h = Sha256::new();
        for v in self.cost.entries().iter().chain(&self.losses).chain(&self.base) {
            h.update(v.to_le_bytes());
        }
        h.update(self.params.p.to_le_bytes());
        h.update((grid_res as u64).to_le_bytes());
        hex::encode(&h.finalize()[..8])
    }
}

/// Grid-resolved ambiguity set: the transported distributions `D''` inside
/// the Wasserstein ball and every grid `D'` reachable from one of them
/// within the KL budget.
#[derive(Debug, Clone)]
pub struct AmbiguityGrid {
    pub grid_res: usize,
    pub transported: Vec<Vec<f64>>,
    pub reachable: Vec<Vec<f64>>,
}

struct GridPoint {
    w: Vec<f64>,
    ln: Vec<f64>,
    neg_entropy: f64,
}

impl GridPoint {
    fn new(w: Vec<f64>) -> Self {
        let ln = w.iter().map(|v| if *v > 0.0 { v.ln() } else { f64::NEG_INFINITY }).collect::<Vec<_>>();
        let neg_entropy = w.iter().zip(&ln).filter(|(v, _)| **v > 0.0).map(|(v, l)| v * l).sum();
        Self { w, ln, neg_entropy }
    }

    /// `KL(self || other)`.
    fn kl_to(&self, other: &GridPoint) -> f64 {
        let mut cross = 0.0;
        for (a, lb) in self.w.iter().zip(&other.ln) {
            if *a > 0.0 {
                if *lb == f64::NEG_INFINITY {
                    return f64::INFINITY;
                }
                cross += a * lb;
            }
        }
        self.neg_entropy - cross
    }
}

impl AmbiguityGrid {
    pub fn build(cost: &CostMatrix, base: &[f64], params: &AmbiguityParams, grid_res: usize) -> Result<Self> {
        params.validate()?;
        check_weights(base)?;
        let m = base.len();
        let cells = simplex::grid_size(m, grid_res);
        let pairs = cells.saturating_mul(cells);
        if pairs > MAX_GRID_PAIRS {
            return Err(Error::TooLarge {
                cells: pairs,
                limit: MAX_GRID_PAIRS,
            });
        }
        let mut points = simplex::grid(m, grid_res, u128::MAX)?;
        // D_n itself belongs to the set even when it is off the grid.
        if !points.iter().any(|p| p == base) {
            points.push(base.to_vec());
        }

        let transported: Vec<Vec<f64>> = points
            .par_iter()
            .map(|d| wasserstein_p_weights(base, d, cost, params.p).map(|w| (w, d)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|(w, _)| *w <= params.eps + FEAS_TOL)
            .map(|(_, d)| d.clone())
            .collect();

        let sources: Vec<GridPoint> = transported.iter().cloned().map(GridPoint::new).collect();
        let gamma = params.gamma + FEAS_TOL;
        let reachable = points
            .into_par_iter()
            .filter(|d| {
                let target = GridPoint::new(d.clone());
                sources.iter().any(|s| s.kl_to(&target) <= gamma)
            })
            .collect();
        Ok(Self {
            grid_res,
            transported,
            reachable,
        })
    }

    /// `max_{D' reachable} E_{D'}[L]`.
    pub fn sup(&self, losses: &[f64]) -> f64 {
        self.reachable
            .iter()
            .map(|d| d.iter().zip(losses).map(|(w, l)| w * l).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Robust loss by double enumeration at simplex resolution `1/grid_res`.
pub fn sr_loss_exact(inst: &FiniteInstance, grid_res: usize) -> Result<f64> {
    inst.validate()?;
    if grid_res == 0 {
        return Err(Error::param("grid_res", "must be positive"));
    }
    let grid = AmbiguityGrid::build(&inst.cost, &inst.base, &inst.params, grid_res)?;
    Ok(grid.sup(&inst.losses))
}

/// Minimizer and value of the three-variable dual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub value: f64,
    pub lambda: f64,
    pub beta: f64,
    pub eta: f64,
}

struct DualObjective<'a> {
    inst: &'a FiniteInstance,
    /// `d^p(z, xi)`, row-major.
    cost_p: Vec<f64>,
    eps_p: f64,
    max_loss: f64,
    support: Vec<usize>,
}

impl DualObjective<'_> {
    fn eval(&self, lambda: f64, beta: f64, eta: f64) -> f64 {
        let m = self.inst.len();
        let gamma = self.inst.params.gamma;
        let mut g = vec![0.0; m];
        for (gi, l) in g.iter_mut().zip(&self.inst.losses) {
            *gi = if beta > 0.0 {
                beta * (beta / (eta - l)).ln() + (gamma - 1.0) * beta + eta
            } else {
                eta
            };
        }
        let mut total = lambda * self.eps_p;
        for &z in &self.support {
            let row = &self.cost_p[z * m..(z + 1) * m];
            let phi = g
                .iter()
                .zip(row)
                .map(|(gi, d)| gi - lambda * d)
                .fold(f64::NEG_INFINITY, f64::max);
            total += self.inst.base[z] * phi;
        }
        total
    }
}

/// Minimizes the dual over `(lambda, beta, eta)` by nested one-dimensional
/// searches in log coordinates. The objective is jointly convex, so each
/// partial minimization stays unimodal in the remaining variables.
pub fn dual_minimizer(inst: &FiniteInstance) -> Result<DualPoint> {
    inst.validate()?;
    let params = &inst.params;
    if !(params.gamma > 0.0) {
        return Err(Error::param("gamma", "the dual requires gamma > 0"));
    }
    let m = inst.len();
    let p = params.p as i32;
    let cost_p: Vec<f64> = inst.cost.entries().iter().map(|d| d.powi(p)).collect();
    let obj = DualObjective {
        inst,
        cost_p,
        eps_p: params.eps.powi(p),
        max_loss: inst.max_loss(),
        support: (0..m).filter(|&z| inst.base[z] > 0.0).collect(),
    };

    // beta = 0 collapses phi to eta; the best such point is (0, 0, max L).
    let mut best = DualPoint {
        value: obj.max_loss,
        lambda: 0.0,
        beta: 0.0,
        eta: obj.max_loss,
    };

    let scale = obj.max_loss.max(1e-12);
    let spread = inst.losses.iter().fold(0.0f64, |acc, l| acc.max(obj.max_loss - l));
    if spread == 0.0 {
        return Ok(best);
    }
    let min_cost = (0..m * m)
        .filter(|k| k / m != k % m)
        .map(|k| obj.cost_p[k])
        .filter(|c| *c > 0.0)
        .fold(f64::INFINITY, f64::min);
    let dscale = if min_cost.is_finite() { min_cost } else { 1.0 };

    let (b_lo, b_hi) = ((1e-12 * scale).ln(), (1e6 * scale).ln());
    let (c_lo, c_hi) = ((1e-12 * spread).ln(), (1e6 * scale).ln());
    let (a_lo, a_hi) = ((1e-9 * scale / dscale).ln(), (1e12 * scale / dscale).ln());
    const SCAN: usize = 16;
    const ITERS: usize = 60;

    let over_beta = |lambda: f64, eta: f64| {
        crate::reweight::scan_golden(|b| obj.eval(lambda, b.exp(), eta), b_lo, b_hi, SCAN, ITERS)
    };
    let over_eta = |lambda: f64| {
        crate::reweight::scan_golden(
            |c| over_beta(lambda, obj.max_loss + c.exp()).1,
            c_lo,
            c_hi,
            SCAN,
            ITERS,
        )
    };
    let lambda_zero = over_eta(0.0);
    let (a, v) = crate::reweight::scan_golden(|a| over_eta(a.exp()).1, a_lo, a_hi, SCAN, ITERS);
    let (lambda, value, c) = if lambda_zero.1 <= v {
        (0.0, lambda_zero.1, lambda_zero.0)
    } else {
        (a.exp(), v, over_eta(a.exp()).0)
    };
    if value < best.value {
        let eta = obj.max_loss + c.exp();
        let (b, v2) = over_beta(lambda, eta);
        best = DualPoint {
            value: value.min(v2),
            lambda,
            beta: b.exp(),
            eta,
        };
    }
    if !best.value.is_finite() {
        return Err(Error::Numeric("dual objective is not finite".into()));
    }
    Ok(best)
}

pub fn dual_value(inst: &FiniteInstance) -> Result<f64> {
    Ok(dual_minimizer(inst)?.value)
}

/// Affine loss family `L(theta, z_i) = slope_i * theta + intercept_i` on a
/// uniform grid of `theta_points` values over `[theta_lo, theta_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFamily {
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub theta_points: usize,
}

impl AffineFamily {
    pub fn thetas(&self) -> Vec<f64> {
        let n = self.theta_points;
        if n == 1 {
            return vec![self.theta_lo];
        }
        (0..n)
            .map(|k| self.theta_lo + (self.theta_hi - self.theta_lo) * k as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn losses(&self, theta: f64) -> Vec<f64> {
        self.slopes
            .iter()
            .zip(&self.intercepts)
            .map(|(a, b)| a * theta + b)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimaxResult {
    /// `min_theta max_{D'} E_{D'}[L(theta)]`
    pub minmax: f64,
    /// `max_{D'} min_theta E_{D'}[L(theta)]`, over reachable grid points and their pairwise mixtures
    pub maxmin: f64,
    pub theta_star: f64,
}

/// Both orders of the learner/adversary game over the same theta grid and
/// the same enumerated ambiguity set.
pub fn minimax_gap(
    family: &AffineFamily,
    cost: &CostMatrix,
    base: &[f64],
    params: &AmbiguityParams,
    grid_res: usize,
) -> Result<MinimaxResult> {
    if family.theta_points == 0 || grid_res == 0 {
        return Err(Error::param("grid", "theta and simplex grids must be nonempty"));
    }
    if family.slopes.len() != base.len() || family.intercepts.len() != base.len() {
        return Err(Error::LengthMismatch {
            left: base.len(),
            right: family.slopes.len(),
        });
    }
    if !(family.theta_hi >= family.theta_lo) {
        return Err(Error::param("theta", "theta_hi must be >= theta_lo"));
    }
    let grid = AmbiguityGrid::build(cost, base, params, grid_res)?;
    if grid.reachable.is_empty() {
        return Err(Error::Numeric("empty ambiguity set".into()));
    }
    let thetas = family.thetas();

    let (minmax, theta_star) = thetas
        .iter()
        .map(|&t| (grid.sup(&family.losses(t)), t))
        .fold((f64::INFINITY, f64::NAN), |acc, x| if x.0 < acc.0 { x } else { acc });

    let loss_table: Vec<Vec<f64>> = thetas.iter().map(|&t| family.losses(t)).collect();
    // expected loss of every reachable point at every theta
    let profiles: Vec<Vec<f64>> = grid
        .reachable
        .par_iter()
        .map(|d| {
            loss_table
                .iter()
                .map(|l| d.iter().zip(l).map(|(w, v)| w * v).sum::<f64>())
                .collect()
        })
        .collect();
    let floor = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let mut ranked: Vec<(f64, usize)> = profiles.iter().enumerate().map(|(i, v)| (floor(v), i)).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut maxmin = ranked[0].0;

    // The ambiguity set is convex, so mixtures of reachable points belong to
    // it as well. The saddle point usually balances two thetas and falls
    // between grid points; mixing the leading candidates recovers it.
    let top: Vec<usize> = ranked.iter().take(MIX_CANDIDATES).map(|&(_, i)| i).collect();
    let mixed = (0..top.len())
        .into_par_iter()
        .map(|a| {
            let pa = &profiles[top[a]];
            let mut best = f64::NEG_INFINITY;
            for &b in &top[a + 1..] {
                let pb = &profiles[b];
                let value = |t: f64| {
                    pa.iter()
                        .zip(pb)
                        .map(|(x, y)| (1.0 - t) * x + t * y)
                        .fold(f64::INFINITY, f64::min)
                };
                // concave in t
                let (_, v) = crate::reweight::golden_min(|t| -value(t), 0.0, 1.0, 60);
                best = best.max(-v);
            }
            best
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    maxmin = maxmin.max(mixed);
    Ok(MinimaxResult {
        minmax,
        maxmin,
        theta_star,
    })
}

/// One regression record of an oracle evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub instance_hash: String,
    pub eps: f64,
    pub gamma: f64,
    pub value: f64,
}

pub fn write_oracle_csv<W: Write>(records: &[OracleRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
