//! Adversarial example generation.
//!
//! [`pgd_attack`] is the projected sign-gradient ascent used for evaluation.
//! [`udr_attack`] replaces the hard projection with a soft penalty: each
//! ascent step on the loss is followed by a descent step on
//! `lambda * dhat(x, x0)`, where `dhat` grows like the distance inside the
//! budget and like `distance / tau` beyond it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DomainBox, Sample};
use crate::error::{Error, Result};
use crate::metrics::Norm;
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub eps: f64,
    pub steps: usize,
    pub step_size: f64,
    pub norm: Norm,
    pub random_start: bool,
    pub seed: u64,
    /// Dual variable weighting the distance penalty (UDR only).
    pub lambda: f64,
    pub tau: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            steps: 10,
            step_size: 0.025,
            norm: Norm::Linf,
            random_start: true,
            seed: 0,
            lambda: 1.0,
            tau: 1.0,
        }
    }
}

impl AttackConfig {
    /// PGD-`steps` with step size `eps / 4` and no random start.
    pub fn pgd(eps: f64, steps: usize) -> Self {
        Self {
            eps,
            steps,
            step_size: eps / 4.0,
            random_start: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) {
            return Err(Error::param("eps", "must be >= 0"));
        }
        if self.steps > 0 && !(self.step_size > 0.0) && self.eps > 0.0 {
            return Err(Error::param("step_size", "must be > 0 when steps > 0"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::param("tau", "must be > 0"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::param("lambda", "must be >= 0"));
        }
        if self.norm == Norm::L1 {
            return Err(Error::param("norm", "attacks support linf and l2"));
        }
        Ok(())
    }

    /// Copy of the config whose seed is specialised to one sample of a batch.
    pub fn for_sample(&self, index: usize) -> Self {
        Self {
            seed: self.seed ^ index as u64,
            ..self.clone()
        }
    }
}

/// A scalar function of the input with its gradient.
pub trait InputObjective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn grad(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Cross-entropy of a fixed model at a fixed label, as a function of the input.
pub struct ModelObjective<'a> {
    pub model: &'a ModelParams,
    pub label: usize,
}

impl InputObjective for ModelObjective<'_> {
    fn dim(&self) -> usize {
        self.model.arch.input_dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.model.loss_at(x, self.label)
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.model.loss_and_grads(x, self.label)?.grad_x)
    }
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Soft distance: `d` below the budget, `eps + (d - eps) / tau` beyond it.
pub fn dhat(x: &[f64], x0: &[f64], eps: f64, tau: f64, norm: Norm) -> Result<f64> {
    check_len(x, x0)?;
    if !(eps >= 0.0) || !(tau > 0.0) {
        return Err(Error::param("dhat", "need eps >= 0 and tau > 0"));
    }
    Ok(dhat_of_distance(norm.distance(x, x0), eps, tau))
}

pub fn dhat_of_distance(d: f64, eps: f64, tau: f64) -> f64 {
    if d <= eps {
        d
    } else {
        eps + (d - eps) / tau
    }
}

/// Gradient of the norm `||x - x0||` in `x`. At the origin this is zero; for
/// `linf` the subgradient is spread evenly over the maximal coordinates.
pub fn norm_grad(x: &[f64], x0: &[f64], norm: Norm) -> Vec<f64> {
    let diff: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
    let mut g = vec![0.0; diff.len()];
    match norm {
        Norm::Linf => {
            let m = diff.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
            if m > 0.0 {
                let ties = diff.iter().filter(|d| d.abs() == m).count() as f64;
                for (gi, d) in g.iter_mut().zip(&diff) {
                    if d.abs() == m {
                        *gi = d.signum() / ties;
                    }
                }
            }
        }
        Norm::L2 => {
            let n = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
            if n > 0.0 {
                for (gi, d) in g.iter_mut().zip(&diff) {
                    *gi = d / n;
                }
            }
        }
        Norm::L1 => {
            for (gi, d) in g.iter_mut().zip(&diff) {
                *gi = if *d == 0.0 { 0.0 } else { d.signum() };
            }
        }
    }
    g
}

/// Gradient of [`dhat`] in `x`; the threshold itself takes the inner branch.
pub fn dhat_grad(x: &[f64], x0: &[f64], eps: f64, tau: f64, norm: Norm) -> Vec<f64> {
    let d = norm.distance(x, x0);
    let scale = if d <= eps { 1.0 } else { 1.0 / tau };
    norm_grad(x, x0, norm).into_iter().map(|g| g * scale).collect()
}

/// `d_X(x, x') + M * 1{y != y'}`.
pub fn sample_shift_cost(z: &Sample, z2: &Sample, label_penalty: f64, norm: Norm) -> Result<f64> {
    check_len(&z.x, &z2.x)?;
    let shift = if z.y != z2.y { label_penalty } else { 0.0 };
    Ok(norm.distance(&z.x, &z2.x) + shift)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn random_offset(x0: &[f64], eps: f64, rng: &mut impl Rng) -> Vec<f64> {
    x0.iter()
        .map(|v| {
            if eps > 0.0 {
                v + rng.random_range(-eps..=eps)
            } else {
                *v
            }
        })
        .collect()
}

fn project_ball(x: &mut [f64], x0: &[f64], eps: f64, norm: Norm) {
    match norm {
        Norm::Linf | Norm::L1 => {
            for (v, c) in x.iter_mut().zip(x0) {
                *v = v.clamp(c - eps, c + eps);
            }
        }
        Norm::L2 => {
            let n = Norm::L2.distance(x, x0);
            if n > eps {
                let s = eps / n;
                for (v, c) in x.iter_mut().zip(x0) {
                    *v = c + (*v - c) * s;
                }
            }
        }
    }
}

/// Projected gradient ascent inside `B(x0, eps)` intersected with the domain box.
///
/// Returns the iterate with the largest objective, the (clipped) clean
/// point included, so the attack never lowers the loss.
pub fn pgd<O: InputObjective>(obj: &O, x0: &[f64], cfg: &AttackConfig, domain: &DomainBox) -> Result<Vec<f64>> {
    cfg.validate()?;
    if x0.len() != obj.dim() || domain.dim() != x0.len() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            got: x0.len(),
        });
    }
    let mut center = x0.to_vec();
    domain.clip(&mut center);
    let mut best = center.clone();
    let mut best_val = obj.value(&best)?;
    if cfg.eps == 0.0 {
        return Ok(best);
    }

    let mut x = if cfg.random_start {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut x = random_offset(&center, cfg.eps, &mut rng);
        project_ball(&mut x, &center, cfg.eps, cfg.norm);
        domain.clip(&mut x);
        let v = obj.value(&x)?;
        if v > best_val {
            best_val = v;
            best = x.clone();
        }
        x
    } else {
        center.clone()
    };

    for _ in 0..cfg.steps {
        let g = obj.grad(&x)?;
        match cfg.norm {
            Norm::L2 => {
                let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    for (v, gi) in x.iter_mut().zip(&g) {
                        *v += cfg.step_size * gi / n;
                    }
                }
            }
            _ => {
                for (v, gi) in x.iter_mut().zip(&g) {
                    *v += cfg.step_size * sign(*gi);
                }
            }
        }
        project_ball(&mut x, &center, cfg.eps, cfg.norm);
        domain.clip(&mut x);
        let v = obj.value(&x)?;
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite loss during attack".into()));
        }
        if v > best_val {
            best_val = v;
            best = x.clone();
        }
    }
    Ok(best)
}

/// Penalised sign-gradient ascent: no ball projection, a single clip to the
/// domain box at the end.
pub fn udr<O: InputObjective>(obj: &O, x0: &[f64], cfg: &AttackConfig, domain: &DomainBox) -> Result<Vec<f64>> {
    cfg.validate()?;
    if x0.len() != obj.dim() || domain.dim() != x0.len() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            got: x0.len(),
        });
    }
    let mut x = if cfg.random_start {
        random_offset(x0, cfg.eps, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
    } else {
        x0.to_vec()
    };
    for _ in 0..cfg.steps {
        let g = obj.grad(&x)?;
        for (v, gi) in x.iter_mut().zip(&g) {
            *v += cfg.step_size * sign(*gi);
        }
        if cfg.lambda > 0.0 {
            let pen = dhat_grad(&x, x0, cfg.eps, cfg.tau, cfg.norm);
            for (v, pi) in x.iter_mut().zip(&pen) {
                *v -= cfg.step_size * cfg.lambda * pi;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite iterate during attack".into()));
        }
    }
    domain.clip(&mut x);
    Ok(x)
}

pub fn pgd_attack(model: &ModelParams, sample: &Sample, cfg: &AttackConfig, domain: &DomainBox) -> Result<Sample> {
    let obj = ModelObjective {
        model,
        label: sample.y,
    };
    Ok(Sample::new(pgd(&obj, &sample.x, cfg, domain)?, sample.y))
}

pub fn udr_attack(model: &ModelParams, sample: &Sample, cfg: &AttackConfig, domain: &DomainBox) -> Result<Sample> {
    let obj = ModelObjective {
        model,
        label: sample.y,
    };
    Ok(Sample::new(udr(&obj, &sample.x, cfg, domain)?, sample.y))
}
