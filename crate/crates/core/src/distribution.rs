use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a probability vector.
pub const MASS_TOL: f64 = 1e-12;

/// Support of a discrete distribution: either raw feature vectors or indices
/// into a fixed finite space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Support {
    Points(Vec<Vec<f64>>),
    Indices(Vec<usize>),
}

impl Support {
    pub fn len(&self) -> usize {
        match self {
            Support::Points(p) => p.len(),
            Support::Indices(i) => i.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Finitely supported probability measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    support: Support,
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(support: Support, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::LengthMismatch {
                left: support.len(),
                right: weights.len(),
            });
        }
        check_weights(&weights)?;
        Ok(Self { support, weights })
    }

    /// Distribution over the indices `0..weights.len()` of a finite space.
    pub fn on_indices(weights: Vec<f64>) -> Result<Self> {
        let idx = (0..weights.len()).collect();
        Self::new(Support::Indices(idx), weights)
    }

    pub fn on_points(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        Self::new(Support::Points(points), weights)
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        Self::on_indices(vec![1.0 / m as f64; m])
    }

    pub fn dirac(m: usize, at: usize) -> Result<Self> {
        let mut w = vec![0.0; m];
        *w.get_mut(at)
            .ok_or_else(|| Error::InvalidDistribution(format!("index {at} outside 0..{m}")))? = 1.0;
        Self::on_indices(w)
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn expectation(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: values.len(),
            });
        }
        Ok(self.weights.iter().zip(values).map(|(w, v)| w * v).sum())
    }
}

/// Checks that `weights` is a nonnegative vector of unit mass.
pub fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidDistribution("empty support".into()));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidDistribution(format!("weight {w} is not a nonnegative real")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidDistribution(format!(
            "weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Budgets and shape parameters of the ambiguity set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityParams {
    /// Wasserstein radius (adversarial budget).
    pub eps: f64,
    /// KL radius (statistical budget).
    pub gamma: f64,
    /// Wasserstein order.
    pub p: u32,
    /// Temperature of the soft distance used by the adversary.
    pub tau: f64,
    /// Label-shift penalty of the sample-shift cost.
    pub label_penalty: f64,
}

impl Default for AmbiguityParams {
    fn default() -> Self {
        Self {
            eps: 0.1,
            gamma: 0.1,
            p: 1,
            tau: 1.0,
            label_penalty: 1e6,
        }
    }
}

impl AmbiguityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::param("eps", format!("must be >= 0, got {}", self.eps)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::param("gamma", format!("must be >= 0, got {}", self.gamma)));
        }
        if self.p < 1 {
            return Err(Error::param("p", "Wasserstein order must be >= 1"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::param("tau", format!("must be > 0, got {}", self.tau)));
        }
        if !(self.label_penalty > 0.0) {
            return Err(Error::param("label_penalty", "must be > 0"));
        }
        Ok(())
    }
}
