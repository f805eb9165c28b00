//! Teacher training, label-free distillation, finetuning, and evaluation.

mod checkpoint;
mod engine;
mod metrics;
mod stages;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use engine::{StageOutput, Targets, TrainRun};
pub use metrics::{metrics_to_csv, read_metrics_csv, write_metrics_csv, METRICS_HEADER};
pub use stages::{
    assert_teacher_quality, distill, distill_with, finetune, precompute_soft_labels, train_teacher, DistillOptions,
    QualityGate, TeacherMode, TeacherQuality,
};

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::autograd::log_softmax_rows;
use crate::curation::argmax_lowest;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::nn::{forward, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Teacher,
    Distill,
    Finetune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Teacher => "teacher",
            Stage::Distill => "distill",
            Stage::Finetune => "finetune",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Stage::Teacher => 0,
            Stage::Distill => 1,
            Stage::Finetune => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Stage::Teacher),
            1 => Some(Stage::Distill),
            2 => Some(Stage::Finetune),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(Stage::Teacher),
            "distill" => Ok(Stage::Distill),
            "finetune" => Ok(Stage::Finetune),
            other => Err(Error::invalid(format!("unknown stage {other:?}"))),
        }
    }
}

/// Hyperparameters of one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub base_lr: f64,
    pub momentum: f64,
    /// L2 factor on weights (biases exempt).
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Validation metrics are logged every this many epochs and after the last one.
    pub eval_every: usize,
    /// Fill the `seconds` metric with wall-clock time; off keeps outputs reproducible.
    pub record_wall_clock: bool,
}

impl TrainConfig {
    pub fn teacher() -> Self {
        Self {
            loss: LossKind::HardCE,
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 100,
            warmup_epochs: 5,
            batch_size: 64,
            seed: 0,
            eval_every: 1,
            record_wall_clock: false,
        }
    }

    pub fn distill() -> Self {
        Self {
            loss: LossKind::JSDiv,
            weight_decay: 1e-4,
            epochs: 120,
            ..Self::teacher()
        }
    }

    /// Hard-label finetuning peaking at a tenth of the distillation rate, no warmup.
    pub fn finetune(distill: &TrainConfig) -> Self {
        Self {
            loss: LossKind::HardCE,
            base_lr: 0.1 * distill.base_lr,
            epochs: 10,
            warmup_epochs: 0,
            ..distill.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be > 0, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return bad(format!(
                "warmup_epochs {} must be below epochs {}",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        Ok(())
    }

    /// Stable 64-bit digest of every field, stored in checkpoints.
    pub fn hash(&self) -> u64 {
        let canon = format!(
            "loss={};base_lr={:016x};momentum={:016x};weight_decay={:016x};epochs={};warmup={};batch={};seed={};eval_every={};wall_clock={}",
            self.loss,
            self.base_lr.to_bits(),
            self.momentum.to_bits(),
            self.weight_decay.to_bits(),
            self.epochs,
            self.warmup_epochs,
            self.batch_size,
            self.seed,
            self.eval_every,
            self.record_wall_clock,
        );
        let digest: [u8; 32] = Sha256::digest(canon.as_bytes()).into();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// One logged epoch of a training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub stage: Stage,
    /// 1-based count of completed epochs.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_loss: f64,
    /// Rate used by the epoch's last step.
    pub lr: f64,
    pub bound_proxy: f64,
    pub seconds: f64,
}

/// Top-1 accuracy (argmax, ties to the lowest class) and mean hard cross-entropy.
pub fn evaluate(params: &ModelParams, data: &LabeledDataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let logits = forward(params, &data.features)?;
    let logp = log_softmax_rows(&logits)?;
    let k = logits.cols();
    if data.labels.iter().any(|&y| y >= k) {
        return Err(Error::shape(
            "evaluate",
            format!("dataset has labels beyond the model's {k} classes"),
        ));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for (i, &y) in data.labels.iter().enumerate() {
        if argmax_lowest(logits.row(i)).0 == y {
            correct += 1;
        }
        loss -= logp.get(i, y);
    }
    let n = data.len() as f64;
    Ok((correct as f64 / n, loss / n))
}
