//! Generalization certificates and a Monte Carlo audit of their feasibility event.
//!
//! With `delta = (eps / (diam + 1))^p` and covering number `m(Z, delta)`,
//! the true distribution lies in the ambiguity set of `n` i.i.d. samples
//! with probability at least
//!
//! ```text
//! 1 - exp(-gamma n) (4 / delta)^m(Z, delta)
//! ```
//!
//! The covering number is replaced by a greedy upper bound. A larger `m`
//! only shrinks the stated probability, so the certificate stays valid.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::check_weights;
use crate::error::{Error, Result};
use crate::metrics::{kl_divergence, tv_distance, wasserstein_p_weights, CostMatrix};
use crate::simplex;

/// `(eps / (diam + 1))^p`, in `(0, 1]` whenever `0 < eps <= diam + 1`.
pub fn delta_of(eps: f64, diam: f64, p: u32) -> Result<f64> {
    if !(eps > 0.0) || !(diam >= 0.0) || p < 1 {
        return Err(Error::param("delta", "need eps > 0, diam >= 0 and p >= 1"));
    }
    if eps > diam + 1.0 {
        return Err(Error::param("eps", format!("must not exceed diam + 1 = {}", diam + 1.0)));
    }
    Ok((eps / (diam + 1.0)).powi(p as i32))
}

/// Greedy farthest-point covering of a finite space by closed `delta`-balls
/// centred in the space. Returns the number of centres, an upper bound on
/// the internal covering number.
pub fn covering_number_greedy(cost: &CostMatrix, delta: f64) -> Result<usize> {
    let m = cost.rows();
    if m == 0 || cost.cols() != m {
        return Err(Error::param("points", "need a nonempty square cost matrix"));
    }
    let mut nearest: Vec<f64> = (0..m).map(|j| cost.get(0, j)).collect();
    let mut centres = 1;
    loop {
        let (far, dist) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, &d)| if d > acc.1 { (j, d) } else { acc });
        if dist <= delta {
            return Ok(centres);
        }
        centres += 1;
        for (j, n) in nearest.iter_mut().enumerate() {
            *n = n.min(cost.get(far, j));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateInputs {
    pub n: usize,
    pub gamma: f64,
    /// `eps` for the generalization certificate, `sigma` for the robustness one.
    pub eps_or_sigma: f64,
    pub diam: f64,
    pub p: u32,
    pub m_cover: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub delta: f64,
    pub raw: f64,
    pub clamped: f64,
    pub vacuous: bool,
}

/// `1 - exp(-gamma n + m ln(4 / delta))`, evaluated in log space.
pub fn certificate_probability(c: &CertificateInputs) -> Result<Certificate> {
    if c.n == 0 || c.m_cover == 0 || !(c.gamma >= 0.0) {
        return Err(Error::param("certificate", "need n >= 1, m_cover >= 1 and gamma >= 0"));
    }
    let delta = delta_of(c.eps_or_sigma, c.diam, c.p)?;
    let penalty = c.m_cover as f64 * (4.0 / delta).ln();
    let budget = c.gamma * c.n as f64;
    let mut exponent = penalty - budget;
    // exact cancellation up to rounding of the two products
    if exponent.abs() <= 4.0 * f64::EPSILON * penalty.max(budget) {
        exponent = 0.0;
    }
    let raw = -exponent.exp_m1();
    Ok(Certificate {
        delta,
        raw,
        clamped: raw.max(0.0),
        vacuous: raw <= 0.0,
    })
}

/// Robustness variant: `delta` comes from `sigma` and the robust loss must be
/// trained with budget `eps + sigma`. Returns that budget with the certificate.
pub fn robustness_certificate(eps: f64, c: &CertificateInputs) -> Result<(f64, Certificate)> {
    if !(eps >= 0.0) {
        return Err(Error::param("eps", "must be >= 0"));
    }
    Ok((eps + c.eps_or_sigma, certificate_probability(c)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityConfig {
    pub n: usize,
    pub eps: f64,
    pub gamma: f64,
    pub p: u32,
    pub trials: usize,
    pub seed: u64,
    /// Resolution of the simplex grid searched for a witness `D'`.
    pub grid_res: usize,
}

/// Fraction of draws `D_n ~ true_dist^n` for which some `D'` satisfies
/// `W_p(D_n, D') <= eps` and `KL(D' || D) <= gamma`.
///
/// Witnesses are searched over the simplex grid (plus `D` and `D_n`
/// themselves), so the frequency can only be underestimated.
pub fn feasibility_monte_carlo(true_dist: &[f64], cost: &CostMatrix, cfg: &FeasibilityConfig) -> Result<f64> {
    check_weights(true_dist)?;
    let m = true_dist.len();
    if m < 2 || cost.rows() != m || cost.cols() != m {
        return Err(Error::InvalidDistribution(
            "true distribution needs at least two points matching the cost matrix".into(),
        ));
    }
    if cfg.trials == 0 || cfg.n == 0 || cfg.grid_res == 0 {
        return Err(Error::param("trials", "trials, n and grid_res must be positive"));
    }
    if !(cfg.eps >= 0.0) || !(cfg.gamma >= 0.0) || cfg.p < 1 {
        return Err(Error::param("budget", "need eps >= 0, gamma >= 0, p >= 1"));
    }
    let tol = 1e-12;
    let mut candidates: Vec<Vec<f64>> = simplex::grid(m, cfg.grid_res, 50_000_000)?
        .into_iter()
        .filter(|d| kl_divergence(d, true_dist).map(|k| k <= cfg.gamma + tol).unwrap_or(false))
        .collect();
    candidates.push(true_dist.to_vec());

    let diam = cost.diam();
    let min_move = cost.min_offdiag();
    let inv_p = 1.0 / cfg.p as f64;
    let sampler = WeightedIndex::new(true_dist)
        .map_err(|e| Error::InvalidDistribution(e.to_string()))?;

    let feasible = (0..cfg.trials)
        .into_par_iter()
        .map(|t| -> Result<bool> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut counts = vec![0usize; m];
            for _ in 0..cfg.n {
                counts[sampler.sample(&mut rng)] += 1;
            }
            let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / cfg.n as f64).collect();
            if kl_divergence(&empirical, true_dist)? <= cfg.gamma + tol {
                return Ok(true);
            }
            for cand in &candidates {
                let tv = tv_distance(&empirical, cand)?;
                // W_p >= W_1 >= min_move * TV  and  W_p <= diam * TV^(1/p)
                if min_move * tv > cfg.eps + tol {
                    continue;
                }
                if diam * tv.powf(inv_p) <= cfg.eps {
                    return Ok(true);
                }
                if wasserstein_p_weights(&empirical, cand, cost, cfg.p)? <= cfg.eps + tol {
                    return Ok(true);
                }
            }
            Ok(false)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(feasible.iter().filter(|&&f| f).count() as f64 / cfg.trials as f64)
}

/// One row of the certificate CSV report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRow {
    pub n: usize,
    pub eps: f64,
    pub gamma: f64,
    pub p: u32,
    pub m_cover: usize,
    pub bound: f64,
    pub empirical_freq: f64,
    pub trials: usize,
}

pub fn write_certificate_csv<W: Write>(rows: &[CertificateRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
