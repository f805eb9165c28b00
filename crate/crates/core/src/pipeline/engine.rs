use std::time::Instant;

use super::{evaluate, Checkpoint, MetricsRecord, Stage, TrainConfig};
use crate::autograd::Tape;
use crate::curation::teacher_probs;
use crate::data::{batch_iterator, LabeledDataset};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy_hard, distillation_loss, LossKind};
use crate::nn::{forward_on_tape, generalization_bound_proxy, ModelParams, ParamVars};
use crate::optim::{lr_at, sgd_momentum_step, OptimState, ScheduleConfig};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// What each training row is fitted to.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    /// Annotated class indices, one per row.
    Hard(&'a [usize]),
    /// Precomputed teacher probabilities, one row per training row.
    Soft(&'a Tensor),
    /// Teacher evaluated on every minibatch.
    OnlineTeacher(&'a ModelParams),
}

/// Final state of a training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub params: ModelParams,
    pub metrics: Vec<MetricsRecord>,
    /// Resumable snapshot of the finished run, optimizer state included.
    pub checkpoint: Checkpoint,
}

impl StageOutput {
    pub fn into_parts(self) -> (ModelParams, Vec<MetricsRecord>) {
        (self.params, self.metrics)
    }
}

/// A training stage that can be advanced epoch by epoch, checkpointed, and resumed.
pub struct TrainRun<'a> {
    stage: Stage,
    cfg: TrainConfig,
    features: &'a Tensor,
    targets: Targets<'a>,
    val: &'a LabeledDataset,
    schedule: Option<ScheduleConfig>,
    params: ModelParams,
    optim: OptimState,
    epochs_done: usize,
    metrics: Vec<MetricsRecord>,
    started: Instant,
}

impl<'a> TrainRun<'a> {
    pub fn new(
        stage: Stage,
        init: ModelParams,
        features: &'a Tensor,
        targets: Targets<'a>,
        val: &'a LabeledDataset,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let optim = OptimState::new(&init, cfg.momentum, cfg.weight_decay)?;
        Self::assemble(stage, init, optim, 0, features, targets, val, cfg)
    }

    /// Continues a run from a checkpoint written by [`TrainRun::checkpoint`].
    pub fn resume(
        checkpoint: Checkpoint,
        features: &'a Tensor,
        targets: Targets<'a>,
        val: &'a LabeledDataset,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        if checkpoint.config_hash != cfg.hash() {
            return Err(Error::Config(
                "checkpoint was written under a different training configuration".into(),
            ));
        }
        let epoch = checkpoint.epoch as usize;
        if epoch > cfg.epochs {
            return Err(Error::Config(format!(
                "checkpoint epoch {epoch} is beyond the configured {} epochs",
                cfg.epochs
            )));
        }
        if checkpoint.shuffle != Stream::indexed(cfg.seed, "shuffle", epoch as u64).state() {
            return Err(Error::Config(
                "checkpoint shuffle stream does not match the seed".into(),
            ));
        }
        Self::assemble(
            checkpoint.stage,
            checkpoint.params,
            checkpoint.optim,
            epoch,
            features,
            targets,
            val,
            cfg,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        stage: Stage,
        params: ModelParams,
        optim: OptimState,
        epochs_done: usize,
        features: &'a Tensor,
        targets: Targets<'a>,
        val: &'a LabeledDataset,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let (n, d) = features.dims2("train")?;
        let spec = params.spec();
        if d != spec.input_dim() || val.dim() != d {
            return Err(Error::shape(
                "train",
                format!(
                    "features {d}, validation {}, model input {}",
                    val.dim(),
                    spec.input_dim()
                ),
            ));
        }
        let k = spec.num_classes();
        match targets {
            Targets::Hard(labels) => {
                if cfg.loss != LossKind::HardCE {
                    return Err(Error::Config(format!("{} loss needs teacher targets", cfg.loss)));
                }
                if labels.len() != n {
                    return Err(Error::shape("train", format!("{n} rows, {} labels", labels.len())));
                }
            }
            Targets::Soft(q) => {
                if !cfg.loss.is_label_free() {
                    return Err(Error::Config("hard_ce loss needs labels".into()));
                }
                if q.shape() != [n, k] {
                    return Err(Error::shape(
                        "train",
                        format!("targets {:?} for {n} rows of {k} classes", q.shape()),
                    ));
                }
            }
            Targets::OnlineTeacher(t) => {
                if !cfg.loss.is_label_free() {
                    return Err(Error::Config("hard_ce loss needs labels".into()));
                }
                if t.spec().input_dim() != d || t.spec().num_classes() != k {
                    return Err(Error::shape("train", "teacher and student disagree on shapes"));
                }
            }
        }
        let schedule = if cfg.epochs > 0 && n > 0 {
            Some(ScheduleConfig::new(
                cfg.base_lr,
                cfg.warmup_epochs,
                cfg.epochs,
                n.div_ceil(cfg.batch_size),
            )?)
        } else {
            None
        };
        Ok(Self {
            stage,
            cfg: cfg.clone(),
            features,
            targets,
            val,
            schedule,
            params,
            optim,
            epochs_done,
            metrics: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn metrics(&self) -> &[MetricsRecord] {
        &self.metrics
    }

    /// Runs up to `count` more epochs, stopping at the configured total.
    pub fn run_epochs(&mut self, count: usize) -> Result<()> {
        let end = (self.epochs_done + count).min(self.cfg.epochs);
        while self.epochs_done < end {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        self.run_epochs(usize::MAX - self.epochs_done)
    }

    fn run_epoch(&mut self) -> Result<()> {
        let Some(schedule) = self.schedule else {
            // No rows to fit: the epoch is a no-op.
            self.epochs_done += 1;
            return Ok(());
        };
        let epoch = self.epochs_done;
        let n = self.features.rows();
        let batches = batch_iterator(n, self.cfg.batch_size, self.cfg.seed, epoch as u64)?;
        let mut total = 0.0;
        let mut lr = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let step = epoch * schedule.steps_per_epoch + b;
            lr = lr_at(step, &schedule)?;
            let loss = self.step(batch, lr).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence { epoch, step },
                other => other,
            })?;
            total += loss * batch.len() as f64;
        }
        self.epochs_done += 1;

        let done = self.epochs_done;
        if done.is_multiple_of(self.cfg.eval_every) || done == self.cfg.epochs {
            let (val_acc, val_loss) = evaluate(&self.params, self.val)?;
            let seconds = if self.cfg.record_wall_clock {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            };
            self.metrics.push(MetricsRecord {
                stage: self.stage,
                epoch: done,
                train_loss: total / n as f64,
                val_acc,
                val_loss,
                lr,
                bound_proxy: generalization_bound_proxy(&self.params, n as u64)?,
                seconds,
            });
        }
        Ok(())
    }

    /// One minibatch update; returns the batch loss before the update.
    fn step(&mut self, batch: &[usize], lr: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = ParamVars::record(&mut tape, &self.params, true)?;
        let xb = self.features.select_rows(batch);
        let x = tape.constant(xb.clone())?;
        let logits = forward_on_tape(&mut tape, &vars, x)?;
        let loss = match self.targets {
            Targets::Hard(labels) => {
                let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                cross_entropy_hard(&mut tape, logits, &yb)?
            }
            Targets::Soft(q) => distillation_loss(&mut tape, self.cfg.loss, logits, &q.select_rows(batch))?,
            Targets::OnlineTeacher(t) => distillation_loss(&mut tape, self.cfg.loss, logits, &teacher_probs(t, &xb)?)?,
        };
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        tape.backward(loss)?;
        let grads: Vec<Tensor> = vars
            .vars()
            .zip(self.params.tensors())
            .map(|(v, p)| tape.take_grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        sgd_momentum_step(&mut self.params, &grads, &mut self.optim, lr)?;
        Ok(value)
    }

    /// Snapshot from which [`TrainRun::resume`] continues bit-for-bit.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            optim: self.optim.clone(),
            stage: self.stage,
            epoch: self.epochs_done as u32,
            config_hash: self.cfg.hash(),
            shuffle: Stream::indexed(self.cfg.seed, "shuffle", self.epochs_done as u64).state(),
        }
    }

    pub fn finish(self) -> StageOutput {
        let checkpoint = self.checkpoint();
        StageOutput {
            params: self.params,
            metrics: self.metrics,
            checkpoint,
        }
    }
}
