//! SGD with heavy-ball momentum, coupled L2 decay, and the warmup + cosine schedule.

use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::tensor::Tensor;

/// Per-parameter velocity plus the hyperparameters that shape each step.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub velocities: Vec<Tensor>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &ModelParams, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum {momentum} outside [0, 1)")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::invalid(format!("weight decay {weight_decay} must be >= 0")));
        }
        Ok(Self {
            velocities: params.tensors().map(|t| Tensor::zeros(t.shape())).collect(),
            momentum,
            weight_decay,
            step: 0,
        })
    }
}

/// Decay term `factor·w` for each parameter tensor; biases get zeros.
pub fn l2_penalty_gradient(params: &ModelParams, factor: f64) -> Result<Vec<Tensor>> {
    if !(factor >= 0.0 && factor.is_finite()) {
        return Err(Error::invalid(format!("decay factor {factor} must be >= 0")));
    }
    Ok(params
        .tensors()
        .enumerate()
        .map(|(i, t)| {
            if is_weight(i) {
                t.map(|w| factor * w)
            } else {
                Tensor::zeros(t.shape())
            }
        })
        .collect())
}

// Tensors alternate weight, bias.
fn is_weight(index: usize) -> bool {
    index.is_multiple_of(2)
}

/// `v ← μ·v + (g + λ·w)`, `w ← w − lr·v`, with λ applied to weights only.
pub fn sgd_momentum_step(params: &mut ModelParams, grads: &[Tensor], state: &mut OptimState, lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate {lr} must be >= 0")));
    }
    let n = state.velocities.len();
    if grads.len() != n || params.tensors().count() != n {
        return Err(Error::shape(
            "sgd_momentum_step",
            format!("{} grads for {n} parameter tensors", grads.len()),
        ));
    }
    for (i, (p, g)) in params.tensors().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.velocities[i].shape() != p.shape() {
            return Err(Error::shape(
                "sgd_momentum_step",
                format!("tensor {i}: param {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
    }
    let (mu, decay) = (state.momentum, state.weight_decay);
    for (i, (p, g)) in params.tensors_mut().zip(grads).enumerate() {
        let lambda = if is_weight(i) { decay } else { 0.0 };
        let v = state.velocities[i].data_mut();
        for ((w, gv), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
            *vel = mu * *vel + (gv + lambda * *w);
            *w -= lr * *vel;
        }
    }
    state.step += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
}

impl ScheduleConfig {
    pub fn new(base_lr: f64, warmup_epochs: usize, total_epochs: usize, steps_per_epoch: usize) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::invalid(format!("base lr {base_lr} must be > 0")));
        }
        if warmup_epochs >= total_epochs {
            return Err(Error::invalid(format!(
                "warmup epochs {warmup_epochs} must be below total epochs {total_epochs}"
            )));
        }
        if steps_per_epoch == 0 {
            return Err(Error::invalid("steps per epoch must be positive"));
        }
        Ok(Self {
            base_lr,
            warmup_epochs,
            total_epochs,
            steps_per_epoch,
        })
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.steps_per_epoch
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }
}

/// Linear warmup from `base/W` to `base` over the first W steps, then a
/// half cosine reaching zero at the final step.
pub fn lr_at(step: usize, cfg: &ScheduleConfig) -> Result<f64> {
    let w = cfg.warmup_steps();
    let s = cfg.total_steps();
    if step > s {
        return Err(Error::invalid(format!("step {step} beyond schedule end {s}")));
    }
    if step < w {
        return Ok(cfg.base_lr * (step + 1) as f64 / w as f64);
    }
    let progress = (step - w) as f64 / (s - w) as f64;
    Ok(cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
