use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::model::{Activation, Arch, ModelParams};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SRWD";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One row per epoch, columns in [`EpochRecord`] order.
pub fn write_history_csv<W: Write>(history: &TrainHistory, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if history.epochs.is_empty() {
        // keep the header even for an empty run
        wr.write_record([
            "epoch",
            "lr",
            "train_natural_loss",
            "train_robust_loss",
            "train_adv_loss",
            "test_natural_acc",
            "test_robust_acc",
            "test_robust_loss",
            "lambda",
            "mean_dhat",
            "p_min",
            "p_max",
            "weight_sum_dev",
        ])?;
    }
    for e in &history.epochs {
        wr.serialize(e)?;
    }
    wr.flush()?;
    Ok(())
}

/// `epoch, robust_test_acc, robust_test_loss`: the two learning curves.
pub fn write_curve_csv<W: Write>(history: &TrainHistory, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["epoch", "robust_test_acc", "robust_test_loss"])?;
    for e in &history.epochs {
        wr.write_record([
            e.epoch.to_string(),
            e.test_robust_acc.to_string(),
            e.test_robust_loss.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: TrainConfig,
    pub final_epoch: Option<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub natural_acc: Option<f64>,
    pub final_robust: Option<f64>,
    pub best_robust: Option<f64>,
    pub diff: Option<f64>,
}

impl Summary {
    pub fn new(config: &TrainConfig, history: &TrainHistory) -> Self {
        let final_robust = history.final_robust();
        let best_robust = history.best_robust();
        Self {
            config: config.clone(),
            final_epoch: history.epochs.last().cloned(),
            best_epoch: history.best_epoch,
            natural_acc: history.natural_acc(),
            final_robust,
            best_robust,
            diff: best_robust.zip(final_robust).map(|(b, f)| b - f),
        }
    }
}

pub fn write_summary_json<W: Write>(summary: &Summary, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, summary)?;
    Ok(())
}

fn arch_descriptor(arch: &Arch) -> (u8, u64, u64, u64, u8) {
    match *arch {
        Arch::SoftmaxLinear { input, classes } => (0, input as u64, 0, classes as u64, 0),
        Arch::Mlp1 {
            input,
            hidden,
            classes,
            activation,
        } => {
            let act = match activation {
                Activation::Tanh => 0,
                Activation::Relu => 1,
            };
            (1, input as u64, hidden as u64, classes as u64, act)
        }
    }
}

/// `SRWD`, version (u32), arch tag (u8), input/hidden/classes (u64),
/// activation (u8), parameter count (u64), parameters (f64). All little-endian.
pub fn write_checkpoint<W: Write>(model: &ModelParams, mut w: W) -> Result<()> {
    let (tag, input, hidden, classes, act) = arch_descriptor(&model.arch);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&[tag])?;
    for v in [input, hidden, classes] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[act])?;
    w.write_all(&(model.theta.len() as u64).to_le_bytes())?;
    for t in &model.theta {
        w.write_all(&t.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_u64(r: &mut impl Read) -> Result<usize> {
    usize::try_from(u64::from_le_bytes(read_array(r)?)).map_err(|_| Error::Format("size overflows usize".into()))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams> {
    if read_array::<4>(&mut r)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let [tag] = read_array::<1>(&mut r)?;
    let input = read_u64(&mut r)?;
    let hidden = read_u64(&mut r)?;
    let classes = read_u64(&mut r)?;
    let [act] = read_array::<1>(&mut r)?;
    let arch = match (tag, act) {
        (0, _) => Arch::SoftmaxLinear { input, classes },
        (1, 0 | 1) => Arch::Mlp1 {
            input,
            hidden,
            classes,
            activation: if act == 0 { Activation::Tanh } else { Activation::Relu },
        },
        _ => return Err(Error::Format(format!("unknown architecture tag {tag}/{act}"))),
    };
    arch.validate()?;
    let count = read_u64(&mut r)?;
    if count != arch.param_count() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} parameters, architecture needs {}",
            arch.param_count()
        )));
    }
    let theta = (0..count)
        .map(|_| read_array::<8>(&mut r).map(f64::from_le_bytes))
        .collect::<Result<Vec<_>>>()?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    ModelParams::new(arch, theta)
}

pub fn save_checkpoint(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// Parses a flat `key = value` file. Blank lines and `#` comments are
/// ignored; keys keep their order of appearance.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value", lineno + 1)));
        };
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Config(format!("line {}: invalid key '{key}'", lineno + 1)));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}
