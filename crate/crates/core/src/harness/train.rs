use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{EpochRecord, TrainConfig, TrainHistory};
use crate::adversary::{dhat, pgd_attack, udr_attack, AttackConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{LossGrad, ModelParams};
use crate::reweight::solve_weights;

/// Shuffle of `0..n` used for epoch `epoch`.
pub fn epoch_permutation(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mixed = seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mixed));
    idx
}

/// Seed of the random starts at global step `step`.
pub fn attack_seed(base: u64, step: usize) -> u64 {
    base.wrapping_add((step as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let decays = cfg.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.lr * cfg.lr_decay.powi(decays as i32)
}

/// Attack used for the batch at global step `step` under the current `lambda`.
/// Sample `i` of the batch uses `step_attack(..).for_sample(i)`.
pub fn step_attack(cfg: &TrainConfig, step: usize, lambda: f64) -> AttackConfig {
    AttackConfig {
        eps: cfg.ambiguity.eps,
        steps: cfg.attack_steps,
        step_size: cfg.attack_step_size,
        norm: cfg.norm,
        random_start: true,
        seed: attack_seed(cfg.attack_seed, step),
        lambda,
        tau: cfg.ambiguity.tau,
    }
}

/// What happened in one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    /// `lambda` after the update of this step.
    pub lambda: f64,
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub weighted_loss: f64,
    pub mean_loss: f64,
    pub mean_dhat: f64,
}

/// Runs the training loop; see [`train_observed`] for per-step access.
pub fn train(cfg: &TrainConfig, data: &Dataset, test: &Dataset) -> Result<(ModelParams, TrainHistory)> {
    train_observed(cfg, data, test, |_| {})
}

pub fn train_observed(
    cfg: &TrainConfig,
    data: &Dataset,
    test: &Dataset,
    mut observe: impl FnMut(&StepRecord),
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    cfg.check_data(data, test)?;
    let mut model = ModelParams::init(cfg.arch, cfg.seed)?;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok((model, history));
    }

    let amb = cfg.ambiguity;
    let mut velocity = vec![0.0; model.theta.len()];
    let mut lambda = cfg.lambda_init;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg, epoch);
        let (mut robust_sum, mut adv_sum, mut dhat_sum) = (0.0, 0.0, 0.0);
        let (mut p_min, mut p_max, mut sum_dev) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
        let mut steps_in_epoch = 0usize;

        for batch in epoch_permutation(cfg.seed, epoch, data.len()).chunks(cfg.batch_size) {
            let attack = step_attack(cfg, step, lambda);
            let results: Vec<(f64, LossGrad)> = batch
                .par_iter()
                .enumerate()
                .map(|(i, &k)| {
                    let clean = &data.samples[k];
                    let adv = udr_attack(&model, clean, &attack.for_sample(i), &data.domain)?;
                    let d = dhat(&adv.x, &clean.x, amb.eps, amb.tau, cfg.norm)?;
                    Ok((d, model.loss_and_grads(&adv.x, adv.y)?))
                })
                .collect::<Result<_>>()?;

            let nb = batch.len();
            let mean_dhat = results.iter().map(|(d, _)| d).sum::<f64>() / nb as f64;
            lambda = (lambda - cfg.lambda_lr * (amb.eps - mean_dhat)).max(0.0);

            let losses: Vec<f64> = results.iter().map(|(_, lg)| lg.loss).collect();
            let q = vec![1.0 / nb as f64; nb];
            let sol = solve_weights(&losses, &q, amb.gamma)?;
            let mean_loss: f64 = q.iter().zip(&losses).map(|(q, l)| q * l).sum();

            let mut grad = vec![0.0; model.theta.len()];
            for (p, (_, lg)) in sol.weights.iter().zip(&results) {
                for (g, gi) in grad.iter_mut().zip(&lg.grad_theta) {
                    *g += p * gi;
                }
            }
            for ((t, v), g) in model.theta.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                let g = g + cfg.weight_decay * *t;
                *v = cfg.momentum * *v + g;
                *t -= lr * *v;
            }
            if model.theta.iter().any(|t| !t.is_finite()) {
                return Err(Error::Numeric(format!("parameters diverged at step {step}")));
            }

            robust_sum += sol.value;
            adv_sum += mean_loss;
            dhat_sum += mean_dhat;
            for &p in &sol.weights {
                p_min = p_min.min(p);
                p_max = p_max.max(p);
            }
            sum_dev = sum_dev.max((sol.weights.iter().sum::<f64>() - 1.0).abs());
            observe(&StepRecord {
                epoch,
                step,
                lambda,
                losses,
                weights: sol.weights,
                weighted_loss: sol.value,
                mean_loss,
                mean_dhat,
            });
            step += 1;
            steps_in_epoch += 1;
        }

        let steps = steps_in_epoch as f64;
        let (_, train_natural_loss) = evaluate(&model, data, None)?;
        let (test_natural_acc, _) = evaluate(&model, test, None)?;
        let (test_robust_acc, test_robust_loss) = evaluate(&model, test, Some(&cfg.eval.config(cfg.attack_seed)))?;
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            train_natural_loss,
            train_robust_loss: robust_sum / steps,
            train_adv_loss: adv_sum / steps,
            test_natural_acc,
            test_robust_acc,
            test_robust_loss,
            lambda,
            mean_dhat: dhat_sum / steps,
            p_min,
            p_max,
            weight_sum_dev: sum_dev,
        });
    }
    history.update_best();
    Ok((model, history))
}

/// Accuracy and mean cross-entropy, on clean points or under PGD.
pub fn evaluate(model: &ModelParams, data: &Dataset, attack: Option<&AttackConfig>) -> Result<(f64, f64)> {
    if data.dim != model.arch.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.arch.input_dim(),
            got: data.dim,
        });
    }
    if data.is_empty() {
        return Err(Error::param("data", "cannot evaluate on an empty set"));
    }
    let per_sample: Vec<(bool, f64)> = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let x = match attack {
                Some(cfg) => pgd_attack(model, s, &cfg.for_sample(i), &data.domain)?.x,
                None => s.x.clone(),
            };
            Ok((model.predict(&x)? == s.y, model.loss_at(&x, s.y)?))
        })
        .collect::<Result<_>>()?;
    let n = per_sample.len() as f64;
    let correct = per_sample.iter().filter(|(c, _)| *c).count() as f64;
    let loss = per_sample.iter().map(|(_, l)| l).sum::<f64>() / n;
    Ok((correct / n, loss))
}
