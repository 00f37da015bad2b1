use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, TrainConfig, TrainHistory};
use crate::error::{Error, Result};

/// Labelled configurations, each run once per seed. The seed replaces both
/// the training seed and the attack seed; the dataset stays fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub configs: Vec<(String, TrainConfig)>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub seed: u64,
    pub gamma: f64,
    pub eps: f64,
    pub nat: Option<f64>,
    pub final_robust: Option<f64>,
    pub best_robust: Option<f64>,
    pub diff: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
    #[serde(skip)]
    pub history: Option<TrainHistory>,
}

/// One row per configuration, aggregated over seeds (sample std, `n - 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub gamma: f64,
    pub eps: f64,
    pub runs: usize,
    pub failed: usize,
    pub nat_mean: Option<f64>,
    pub nat_std: Option<f64>,
    pub final_mean: Option<f64>,
    pub final_std: Option<f64>,
    pub best_mean: Option<f64>,
    pub best_std: Option<f64>,
    pub diff_mean: Option<f64>,
    pub diff_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub runs: Vec<RunRecord>,
    pub table: Vec<TableRow>,
}

fn run_one(label: &str, base: &TrainConfig, seed: u64) -> RunRecord {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.attack_seed = seed;
    let outcome = cfg.data.build().and_then(|(tr, te)| train(&cfg, &tr, &te));
    let mut rec = RunRecord {
        label: label.to_string(),
        seed,
        gamma: cfg.ambiguity.gamma,
        eps: cfg.ambiguity.eps,
        nat: None,
        final_robust: None,
        best_robust: None,
        diff: None,
        best_epoch: None,
        error: None,
        history: None,
    };
    match outcome {
        Ok((_, h)) => {
            rec.nat = h.natural_acc();
            rec.final_robust = h.final_robust();
            rec.best_robust = h.best_robust();
            rec.diff = rec.best_robust.zip(rec.final_robust).map(|(b, f)| b - f);
            rec.best_epoch = h.best_epoch;
            rec.history = Some(h);
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// Mean and sample standard deviation; the deviation needs two values.
pub(crate) fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

pub fn run_experiment(exp: &Experiment) -> Result<ExperimentRun> {
    if exp.configs.is_empty() || exp.seeds.is_empty() {
        return Err(Error::Config("an experiment needs at least one config and one seed".into()));
    }
    for (label, cfg) in &exp.configs {
        cfg.validate()
            .map_err(|e| Error::Config(format!("config '{label}': {e}")))?;
    }
    let jobs: Vec<(usize, u64)> = (0..exp.configs.len())
        .flat_map(|c| exp.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(c, seed)| run_one(&exp.configs[c].0, &exp.configs[c].1, seed))
        .collect();

    let table = exp
        .configs
        .iter()
        .enumerate()
        .map(|(c, (label, cfg))| {
            let mine = &runs[c * exp.seeds.len()..(c + 1) * exp.seeds.len()];
            let col = |f: fn(&RunRecord) -> Option<f64>| mean_std(&mine.iter().filter_map(f).collect::<Vec<_>>());
            let (nat_mean, nat_std) = col(|r| r.nat);
            let (final_mean, final_std) = col(|r| r.final_robust);
            let (best_mean, best_std) = col(|r| r.best_robust);
            let (diff_mean, diff_std) = col(|r| r.diff);
            TableRow {
                label: label.clone(),
                gamma: cfg.ambiguity.gamma,
                eps: cfg.ambiguity.eps,
                runs: mine.len(),
                failed: mine.iter().filter(|r| r.error.is_some()).count(),
                nat_mean,
                nat_std,
                final_mean,
                final_std,
                best_mean,
                best_std,
                diff_mean,
                diff_std,
            }
        })
        .collect();
    Ok(ExperimentRun { runs, table })
}

pub fn write_table_csv<W: Write>(table: &[TableRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for row in table {
        wr.serialize(row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_runs_csv<W: Write>(runs: &[RunRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in runs {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
