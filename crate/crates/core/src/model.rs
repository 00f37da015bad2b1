//! Small classifiers with hand-written gradients.
//!
//! Two architectures are supported: a multinomial logistic model
//! (`SoftmaxLinear`) and a one-hidden-layer perceptron (`Mlp1`). Both are
//! trained with cross-entropy, and both expose exact gradients with respect
//! to the parameters (for the learner) and to the input (for the adversary).
//!
//! Parameters live in a single flat vector. The layout is row-major weights
//! followed by biases, layer by layer:
//!
//! ```text
//! SoftmaxLinear: W[K x d], b[K]
//! Mlp1:          W1[H x d], b1[H], W2[K x H], b2[K]
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Relu => a.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `a` and output `h`.
    fn derivative(self, a: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    SoftmaxLinear {
        input: usize,
        classes: usize,
    },
    Mlp1 {
        input: usize,
        hidden: usize,
        classes: usize,
        activation: Activation,
    },
}

impl Arch {
    pub fn input_dim(&self) -> usize {
        match *self {
            Arch::SoftmaxLinear { input, .. } | Arch::Mlp1 { input, .. } => input,
        }
    }

    pub fn num_classes(&self) -> usize {
        match *self {
            Arch::SoftmaxLinear { classes, .. } | Arch::Mlp1 { classes, .. } => classes,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Arch::SoftmaxLinear { input, classes } => classes * input + classes,
            Arch::Mlp1 {
                input,
                hidden,
                classes,
                ..
            } => hidden * input + hidden + classes * hidden + classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Arch::SoftmaxLinear { input, classes } => input > 0 && classes >= 2,
            Arch::Mlp1 {
                input,
                hidden,
                classes,
                ..
            } => input > 0 && hidden > 0 && classes >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "architecture {self:?} needs positive sizes and at least two classes"
            )))
        }
    }
}

/// Result of one forward/backward pass.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_theta: Vec<f64>,
    pub grad_x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Arch,
    pub theta: Vec<f64>,
}

impl ModelParams {
    pub fn new(arch: Arch, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.param_count() {
            return Err(Error::DimensionMismatch {
                expected: arch.param_count(),
                got: theta.len(),
            });
        }
        Ok(Self { arch, theta })
    }

    pub fn zeros(arch: Arch) -> Result<Self> {
        Self::new(arch, vec![0.0; arch.param_count()])
    }

    /// Uniform initialization in `[-s, s]` with `s = 1/sqrt(fan_in)` of each layer.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = Vec::with_capacity(arch.param_count());
        let mut layer = |rng: &mut ChaCha8Rng, fan_in: usize, count: usize| {
            let s = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..count {
                theta.push(rng.random_range(-s..=s));
            }
        };
        match arch {
            Arch::SoftmaxLinear { input, classes } => {
                layer(&mut rng, input, classes * input + classes);
            }
            Arch::Mlp1 {
                input,
                hidden,
                classes,
                ..
            } => {
                layer(&mut rng, input, hidden * input + hidden);
                layer(&mut rng, hidden, classes * hidden + classes);
            }
        }
        Self::new(arch, theta)
    }

    fn check_input(&self, x: &[f64], y: usize) -> Result<()> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim(),
                got: x.len(),
            });
        }
        if y >= self.arch.num_classes() {
            return Err(Error::param(
                "label",
                format!("{y} out of range for {} classes", self.arch.num_classes()),
            ));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.forward(x).logits)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let z = self.logits(x)?;
        Ok(argmax(&z))
    }

    /// Cross-entropy at label `y`.
    pub fn loss_at(&self, x: &[f64], y: usize) -> Result<f64> {
        self.check_input(x, y)?;
        let z = self.forward(x).logits;
        Ok(cross_entropy(&z, y))
    }

    pub fn loss_and_grads(&self, x: &[f64], y: usize) -> Result<LossGrad> {
        self.check_input(x, y)?;
        let fwd = self.forward(x);
        let (loss, dz) = cross_entropy_grad(&fwd.logits, y);
        let mut grad_theta = vec![0.0; self.theta.len()];
        let d = self.arch.input_dim();
        let mut grad_x = vec![0.0; d];
        match self.arch {
            Arch::SoftmaxLinear { input, classes } => {
                let (w, _) = self.theta.split_at(classes * input);
                let (gw, gb) = grad_theta.split_at_mut(classes * input);
                for k in 0..classes {
                    for j in 0..input {
                        gw[k * input + j] = dz[k] * x[j];
                        grad_x[j] += w[k * input + j] * dz[k];
                    }
                    gb[k] = dz[k];
                }
            }
            Arch::Mlp1 {
                input,
                hidden,
                classes,
                activation,
            } => {
                let (w1, rest) = self.theta.split_at(hidden * input);
                let (_, rest) = rest.split_at(hidden);
                let (w2, _) = rest.split_at(classes * hidden);
                let (gw1, grest) = grad_theta.split_at_mut(hidden * input);
                let (gb1, grest) = grest.split_at_mut(hidden);
                let (gw2, gb2) = grest.split_at_mut(classes * hidden);

                let mut dh = vec![0.0; hidden];
                for k in 0..classes {
                    for h in 0..hidden {
                        gw2[k * hidden + h] = dz[k] * fwd.hidden[h];
                        dh[h] += w2[k * hidden + h] * dz[k];
                    }
                    gb2[k] = dz[k];
                }
                for h in 0..hidden {
                    let da = dh[h] * activation.derivative(fwd.pre[h], fwd.hidden[h]);
                    for j in 0..input {
                        gw1[h * input + j] = da * x[j];
                        grad_x[j] += w1[h * input + j] * da;
                    }
                    gb1[h] = da;
                }
            }
        }
        Ok(LossGrad {
            loss,
            grad_theta,
            grad_x,
        })
    }

    fn forward(&self, x: &[f64]) -> Forward {
        match self.arch {
            Arch::SoftmaxLinear { input, classes } => {
                let (w, b) = self.theta.split_at(classes * input);
                let logits = affine(w, b, x, classes, input);
                Forward {
                    logits,
                    pre: Vec::new(),
                    hidden: Vec::new(),
                }
            }
            Arch::Mlp1 {
                input,
                hidden,
                classes,
                activation,
            } => {
                let (w1, rest) = self.theta.split_at(hidden * input);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(classes * hidden);
                let pre = affine(w1, b1, x, hidden, input);
                let h: Vec<f64> = pre.iter().map(|&a| activation.apply(a)).collect();
                let logits = affine(w2, b2, &h, classes, hidden);
                Forward {
                    logits,
                    pre,
                    hidden: h,
                }
            }
        }
    }
}

struct Forward {
    logits: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| {
            let row = &w[r * cols..(r + 1) * cols];
            b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

fn cross_entropy(z: &[f64], y: usize) -> f64 {
    (log_sum_exp(z) - z[y]).max(0.0)
}

/// Loss and `softmax(z) - onehot(y)`.
fn cross_entropy_grad(z: &[f64], y: usize) -> (f64, Vec<f64>) {
    let lse = log_sum_exp(z);
    let mut dz: Vec<f64> = z.iter().map(|&v| (v - lse).exp()).collect();
    dz[y] -= 1.0;
    ((lse - z[y]).max(0.0), dz)
}

/// Cross-entropy of the model at a sample.
pub fn model_loss(model: &ModelParams, sample: &Sample) -> Result<f64> {
    model.loss_at(&sample.x, sample.y)
}

pub fn grad_theta(model: &ModelParams, sample: &Sample) -> Result<Vec<f64>> {
    Ok(model.loss_and_grads(&sample.x, sample.y)?.grad_theta)
}

pub fn grad_x(model: &ModelParams, sample: &Sample) -> Result<Vec<f64>> {
    Ok(model.loss_and_grads(&sample.x, sample.y)?.grad_x)
}
