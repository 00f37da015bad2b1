//! KL-constrained re-weighting of per-sample losses.
//!
//! Solves
//!
//! ```text
//! max_p  sum_i p_i L_i   s.t.  p in simplex,  KL(q || p) = sum_i q_i ln(q_i / p_i) <= gamma
//! ```
//!
//! through its KKT parametrization `p_i = beta q_i / (eta - L_i)` with
//! `beta = 1 / sum_j q_j / (eta - L_j)`. The scalar `eta > max L` is the root
//! of
//!
//! ```text
//! G(eta) = ln sum_j q_j / (eta - L_j) + sum_j q_j ln(eta - L_j) - gamma
//! ```
//!
//! which decreases from `+inf` (as `eta -> max L`) to `-gamma` (as `eta -> inf`).
//! All evaluations are carried out in the offset `t = eta - max L` with
//! `ln1p`/`expm1` so neither end of the bracket loses precision.

use serde::{Deserialize, Serialize};

use crate::distribution::check_weights;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightSolution {
    pub weights: Vec<f64>,
    /// `sum_i p_i L_i`.
    pub value: f64,
    /// Dual scalar; `+inf` when the constraint forces `p = q`.
    pub eta: f64,
    pub beta: f64,
    pub kl_attained: f64,
}

struct Problem<'a> {
    losses: &'a [f64],
    q: &'a [f64],
    max_loss: f64,
    /// `max L - L_i >= 0`
    gaps: Vec<f64>,
}

fn validate<'a>(losses: &'a [f64], q: &'a [f64], gamma: f64) -> Result<Problem<'a>> {
    if losses.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: losses.len(),
            right: q.len(),
        });
    }
    check_weights(q)?;
    if let Some(i) = q.iter().position(|&w| w <= 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "reference weight q[{i}] is zero; the reference must have full support"
        )));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::param("losses", "must be finite"));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::param("gamma", format!("must be >= 0, got {gamma}")));
    }
    let max_loss = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gaps = losses.iter().map(|l| max_loss - l).collect();
    Ok(Problem {
        losses,
        q,
        max_loss,
        gaps,
    })
}

impl Problem<'_> {
    fn mean(&self) -> f64 {
        self.q.iter().zip(self.losses).map(|(q, l)| q * l).sum()
    }

    fn spread(&self) -> f64 {
        self.gaps.iter().copied().fold(0.0, f64::max)
    }

    /// `G(max L + t)`, written with `w_i = t / (t + gap_i)` as
    /// `ln(sum q w) - sum q ln w - gamma`.
    fn g(&self, t: f64, gamma: f64) -> f64 {
        let mut a = 0.0;
        let mut b = 0.0;
        for (q, s) in self.q.iter().zip(&self.gaps) {
            a += q * s / (t + s);
            b += q * (s / t).ln_1p();
        }
        (-a).ln_1p() + b - gamma
    }

    /// Dual objective after closed-form minimization over beta:
    /// `h(t) = max L + t - exp(sum q ln(t + gap) - gamma)`.
    fn dual_h(&self, t: f64, gamma: f64) -> f64 {
        let s: f64 = self
            .q
            .iter()
            .zip(&self.gaps)
            .map(|(q, g)| q * (g / t).ln_1p())
            .sum();
        self.max_loss - t * (s - gamma).exp_m1()
    }
}

/// Maximizes the weighted loss over the KL ball `KL(q || p) <= gamma`.
pub fn solve_weights(losses: &[f64], q: &[f64], gamma: f64) -> Result<ReweightSolution> {
    let pb = validate(losses, q, gamma)?;
    let spread = pb.spread();
    if gamma == 0.0 || spread == 0.0 {
        let (eta, beta) = if gamma == 0.0 {
            (f64::INFINITY, f64::INFINITY)
        } else {
            (pb.max_loss, 0.0)
        };
        return Ok(ReweightSolution {
            weights: q.to_vec(),
            value: pb.mean(),
            eta,
            beta,
            kl_attained: 0.0,
        });
    }

    // Bracket the root in t = eta - max L.
    let mut hi = spread;
    let mut guard = 0;
    while pb.g(hi, gamma) > 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::Numeric("could not bracket eta from above".into()));
        }
    }
    let floor = spread * 1e-280;
    let mut lo = hi * 0.5;
    while pb.g(lo, gamma) < 0.0 && lo > floor {
        lo *= 0.5;
    }
    if pb.g(lo, gamma) < 0.0 {
        // gamma so large that the root sits below double resolution: the
        // weights have collapsed onto the maximal losses.
        hi = lo;
    }
    for _ in 0..400 {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = if hi > 4.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        if pb.g(mid, gamma) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);

    let raw: Vec<f64> = pb
        .q
        .iter()
        .zip(&pb.gaps)
        .map(|(q, s)| q * (t / (t + s)))
        .collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let value = weights.iter().zip(losses).map(|(p, l)| p * l).sum();
    let kl_attained = q
        .iter()
        .zip(&weights)
        .map(|(q, p)| q * (q / p).ln())
        .sum::<f64>()
        .max(0.0);
    Ok(ReweightSolution {
        weights,
        value,
        eta: pb.max_loss + t,
        beta: t / total,
        kl_attained,
    })
}

/// Value of the KL dual
/// `inf_{beta >= 0, eta >= max L} sum_i q_i beta ln(beta / (eta - L_i)) + (gamma - 1) beta + eta`.
///
/// The inner minimization over `beta` is closed form; the outer problem is a
/// convex one-dimensional minimization in `eta`, solved by golden-section
/// search over `ln(eta - max L)`.
pub fn kl_dual_value(losses: &[f64], q: &[f64], gamma: f64) -> Result<f64> {
    let pb = validate(losses, q, gamma)?;
    if gamma == 0.0 {
        return Ok(pb.mean());
    }
    let spread = pb.spread();
    if spread == 0.0 {
        return Ok(pb.max_loss);
    }
    let mut top = spread;
    let mut guard = 0;
    while pb.dual_h(2.0 * top, gamma) <= pb.dual_h(top, gamma) {
        top *= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::Numeric("dual objective does not grow".into()));
        }
    }
    // h is flat (equal to max L) far to the left, so a plain golden search can
    // wander onto the plateau; scan first, then refine.
    let f = |u: f64| pb.dual_h(u.exp(), gamma);
    let (_, val) = scan_golden(f, (spread * 1e-200).ln(), (2.0 * top).ln(), 256, 200);
    Ok(val.min(pb.dual_h(2.0 * top, gamma)))
}

/// Coarse scan followed by golden-section refinement around the best cell.
pub(crate) fn scan_golden(f: impl Fn(f64) -> f64, lo: f64, hi: f64, scan: usize, iters: usize) -> (f64, f64) {
    let step = (hi - lo) / (scan - 1) as f64;
    let vals: Vec<f64> = (0..scan).map(|k| f(lo + step * k as f64)).collect();
    let k = (0..scan).fold(0, |best, k| if vals[k] < vals[best] { k } else { best });
    let a = lo + step * k.saturating_sub(1) as f64;
    let b = lo + step * (k + 1).min(scan - 1) as f64;
    let (x, v) = golden_min(&f, a, b, iters);
    if v <= vals[k] {
        (x, v)
    } else {
        (lo + step * k as f64, vals[k])
    }
}

/// Golden-section search for a unimodal function on `[a, b]`; returns the
/// best abscissa and value seen.
pub(crate) fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let (mut best_x, mut best_f) = if fc <= fd { (c, fc) } else { (d, fd) };
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            if fc < best_f {
                best_x = c;
                best_f = fc;
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            if fd < best_f {
                best_x = d;
                best_f = fd;
            }
        }
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
    }
    (best_x, best_f)
}
