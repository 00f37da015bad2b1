//! Re-weighted adversarial training, evaluation, sweeps and persistence.
//!
//! One training step on a mini-batch of size `N`:
//!
//! 1. perturb every sample with the penalised attack at the current `lambda`;
//! 2. `lambda <- max(0, lambda - eta_lambda (eps - mean_i dhat(x_i^a, x_i)))`;
//! 3. re-weight the adversarial losses over the batch (`q` uniform, budget `gamma`);
//! 4. take an SGD step on `sum_i p_i L(theta, (x_i^a, y_i))` with momentum and weight decay.
//!
//! The attack of a batch is generated with the `lambda` from before the update.

mod experiment;
mod persist;
mod train;

pub use experiment::{run_experiment, write_runs_csv, write_table_csv, ExperimentRun, Experiment, RunRecord, TableRow};
pub use persist::{
    load_checkpoint, parse_config_file, read_checkpoint, save_checkpoint, write_checkpoint, write_curve_csv,
    write_history_csv, write_summary_json, Summary, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use train::{attack_seed, epoch_permutation, evaluate, lr_at, step_attack, train, train_observed, StepRecord};

use serde::{Deserialize, Serialize};

use crate::adversary::AttackConfig;
use crate::data::{make_synthetic_spec, Dataset, SyntheticKind, SyntheticSpec};
use crate::distribution::AmbiguityParams;
use crate::error::{Error, Result};
use crate::metrics::Norm;
use crate::model::{Activation, Arch};

/// Synthetic train/test pair. Label noise is applied to the training split only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub kind: SyntheticKind,
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::TwoMoons,
            n_train: 400,
            n_test: 400,
            noise: 0.1,
            label_noise: 0.15,
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn build(&self) -> Result<(Dataset, Dataset)> {
        let train = make_synthetic_spec(&SyntheticSpec {
            kind: self.kind,
            n: self.n_train,
            noise: self.noise,
            label_noise: self.label_noise,
            seed: self.seed,
        })?;
        let test = make_synthetic_spec(&SyntheticSpec {
            kind: self.kind,
            n: self.n_test,
            noise: self.noise,
            label_noise: 0.0,
            seed: self.seed.wrapping_add(0x5EED_7E57),
        })?;
        Ok((train, test))
    }
}

/// PGD evaluation attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalAttack {
    pub eps: f64,
    pub steps: usize,
    pub step_size: f64,
    pub norm: Norm,
}

impl Default for EvalAttack {
    fn default() -> Self {
        Self {
            eps: 0.1,
            steps: 10,
            step_size: 0.025,
            norm: Norm::Linf,
        }
    }
}

impl EvalAttack {
    pub fn config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            eps: self.eps,
            steps: self.steps,
            step_size: self.step_size,
            norm: self.norm,
            random_start: false,
            seed,
            ..AttackConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub data: DataConfig,
    pub arch: Arch,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs (0-based) at whose start the learning rate is multiplied by `lr_decay`.
    pub decay_epochs: Vec<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ambiguity: AmbiguityParams,
    pub norm: Norm,
    pub attack_steps: usize,
    pub attack_step_size: f64,
    pub attack_seed: u64,
    pub lambda_lr: f64,
    pub lambda_init: f64,
    pub seed: u64,
    pub eval: EvalAttack,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            arch: Arch::Mlp1 {
                input: 2,
                hidden: 32,
                classes: 2,
                activation: Activation::Tanh,
            },
            epochs: 60,
            batch_size: 32,
            lr: 0.1,
            lr_decay: 0.1,
            decay_epochs: vec![30, 45],
            momentum: 0.9,
            weight_decay: 5e-4,
            ambiguity: AmbiguityParams::default(),
            norm: Norm::Linf,
            attack_steps: 10,
            attack_step_size: 0.025,
            attack_seed: 0,
            lambda_lr: 0.01,
            lambda_init: 1.0,
            seed: 0,
            eval: EvalAttack::default(),
        }
    }
}

impl TrainConfig {
    /// The long schedule: 200 epochs, decay at 100 and 150.
    pub fn long_schedule(mut self) -> Self {
        self.epochs = 200;
        self.decay_epochs = vec![100, 150];
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.ambiguity.validate()?;
        if self.ambiguity.p != 1 {
            return Err(Error::param("p", "training uses p = 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::param("lr", "lr and lr_decay must be > 0"));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("decay_epochs", "must be strictly increasing"));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::param("momentum", "need momentum in [0, 1) and weight_decay >= 0"));
        }
        if !(self.lambda_lr >= 0.0) || !(self.lambda_init >= 0.0) {
            return Err(Error::param("lambda", "lambda_lr and lambda_init must be >= 0"));
        }
        if self.attack_steps > 0 && !(self.attack_step_size > 0.0) {
            return Err(Error::param("attack_step_size", "must be > 0"));
        }
        if self.norm == Norm::L1 || self.eval.norm == Norm::L1 {
            return Err(Error::param("norm", "attacks support linf and l2"));
        }
        if !(self.eval.eps >= 0.0) || (self.eval.steps > 0 && self.eval.eps > 0.0 && !(self.eval.step_size > 0.0)) {
            return Err(Error::param("eval", "need eps >= 0 and a positive step size"));
        }
        Ok(())
    }

    pub(crate) fn check_data(&self, data: &Dataset, test: &Dataset) -> Result<()> {
        for d in [data, test] {
            if d.dim != self.arch.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.arch.input_dim(),
                    got: d.dim,
                });
            }
            if d.num_classes > self.arch.num_classes() {
                return Err(Error::param("classes", "dataset has more classes than the model"));
            }
        }
        if data.is_empty() {
            return Err(Error::param("data", "training set is empty"));
        }
        Ok(())
    }
}

/// Per-epoch diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Clean cross-entropy on the training set at the end of the epoch.
    pub train_natural_loss: f64,
    /// Mean over steps of `sum_i p_i L_i` at the adversarial points.
    pub train_robust_loss: f64,
    /// Mean over steps of the unweighted adversarial loss.
    pub train_adv_loss: f64,
    pub test_natural_acc: f64,
    pub test_robust_acc: f64,
    pub test_robust_loss: f64,
    /// `lambda` after the last step of the epoch.
    pub lambda: f64,
    pub mean_dhat: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Largest `|sum_i p_i - 1|` seen at solve time.
    pub weight_sum_dev: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` with the highest robust test accuracy (first on ties).
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn natural_acc(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.test_natural_acc)
    }

    pub fn final_robust(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.test_robust_acc)
    }

    pub fn best_robust(&self) -> Option<f64> {
        self.best_epoch.map(|i| self.epochs[i].test_robust_acc)
    }

    pub(crate) fn update_best(&mut self) {
        self.best_epoch = self
            .epochs
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, e)| match best {
                Some((_, acc)) if acc >= e.test_robust_acc => best,
                _ => Some((i, e.test_robust_acc)),
            })
            .map(|(i, _)| i);
    }
}
