//! Classification and distillation objectives, all in nats and averaged over the batch.

use std::fmt;
use std::str::FromStr;

use crate::autograd::{js_row, log_softmax_rows, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row sums of a target distribution must be within this of 1.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// Cross-entropy against annotated class indices.
    HardCE,
    /// Cross-entropy against teacher probabilities.
    SoftCE,
    /// Jensen–Shannon divergence to teacher probabilities.
    JSDiv,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::HardCE => "hard_ce",
            LossKind::SoftCE => "soft_ce",
            LossKind::JSDiv => "js",
        }
    }

    /// Whether the loss only needs teacher probabilities, never labels.
    pub fn is_label_free(self) -> bool {
        !matches!(self, LossKind::HardCE)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard_ce" => Ok(LossKind::HardCE),
            "soft_ce" => Ok(LossKind::SoftCE),
            "js" | "js_div" => Ok(LossKind::JSDiv),
            other => Err(Error::Config(format!(
                "unknown loss {other:?} (expected hard_ce, soft_ce or js)"
            ))),
        }
    }
}

/// Checks that every row of `q` is nonnegative and sums to 1.
pub fn validate_distribution(q: &Tensor) -> Result<()> {
    let (_, k) = q.dims2("distribution")?;
    for (row, r) in q.data().chunks_exact(k).enumerate() {
        if let Some(v) = r.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidDistribution {
                row,
                detail: format!("entry {v} is not a probability"),
            });
        }
        let s: f64 = r.iter().sum();
        if (s - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::InvalidDistribution {
                row,
                detail: format!("row sums to {s}"),
            });
        }
    }
    Ok(())
}

pub fn one_hot(labels: &[usize], k: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::invalid(format!("label {y} out of range for {k} classes")));
        }
        data[i * k + y] = 1.0;
    }
    Tensor::matrix(labels.len(), k, data)
}

fn targeted_cross_entropy(tape: &mut Tape, logits: Var, target: Tensor) -> Result<Var> {
    let (n, k) = tape.value(logits).dims2("cross_entropy")?;
    if n == 0 {
        return Err(Error::shape("cross_entropy", "empty batch"));
    }
    if target.shape() != [n, k] {
        return Err(Error::shape(
            "cross_entropy",
            format!("logits {n}x{k} vs target {:?}", target.shape()),
        ));
    }
    let logp = tape.log_softmax(logits)?;
    let t = tape.constant(target)?;
    let weighted = tape.mul(logp, t)?;
    let total = tape.sum(weighted)?;
    tape.scale(total, -1.0 / n as f64)
}

/// Mean of `−log softmax(z)[y]`.
pub fn cross_entropy_hard(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, k) = tape.value(logits).dims2("cross_entropy")?;
    if labels.len() != n {
        return Err(Error::shape(
            "cross_entropy",
            format!("{n} logit rows but {} labels", labels.len()),
        ));
    }
    let target = one_hot(labels, k)?;
    targeted_cross_entropy(tape, logits, target)
}

/// Mean of `−Σ_k q_k log p_k`; `teacher_probs` is a constant.
pub fn soft_cross_entropy(tape: &mut Tape, logits: Var, teacher_probs: &Tensor) -> Result<Var> {
    validate_distribution(teacher_probs)?;
    targeted_cross_entropy(tape, logits, teacher_probs.clone())
}

/// Mean Jensen–Shannon divergence between `softmax(logits)` and `q_probs`.
pub fn js_divergence(tape: &mut Tape, logits: Var, q_probs: &Tensor) -> Result<Var> {
    validate_distribution(q_probs)?;
    let q = tape.constant(q_probs.clone())?;
    tape.js_divergence(logits, q)
}

/// Distillation objective of the given kind; hard labels are not accepted here.
pub fn distillation_loss(tape: &mut Tape, kind: LossKind, logits: Var, teacher_probs: &Tensor) -> Result<Var> {
    match kind {
        LossKind::SoftCE => soft_cross_entropy(tape, logits, teacher_probs),
        LossKind::JSDiv => js_divergence(tape, logits, teacher_probs),
        LossKind::HardCE => Err(Error::Config(
            "distillation uses teacher probabilities only; hard_ce is not allowed".into(),
        )),
    }
}

/// Mean JS divergence between two probability matrices (no tape).
pub fn js_divergence_probs(p: &Tensor, q: &Tensor) -> Result<f64> {
    validate_distribution(p)?;
    validate_distribution(q)?;
    if !p.same_shape(q) {
        return Err(Error::shape("js_divergence", "p and q differ in shape"));
    }
    let (n, k) = p.dims2("js_divergence")?;
    let total: f64 = (0..n).map(|r| js_row(&p.data()[r * k..(r + 1) * k], q.row(r))).sum();
    Ok(total / n as f64)
}

/// Mean soft cross-entropy of logits against `q` (no tape).
pub fn soft_cross_entropy_value(logits: &Tensor, q: &Tensor) -> Result<f64> {
    validate_distribution(q)?;
    let logp = log_softmax_rows(logits)?;
    if !logp.same_shape(q) {
        return Err(Error::shape("soft_cross_entropy", "shape mismatch"));
    }
    let n = logp.rows();
    let total: f64 = logp
        .data()
        .iter()
        .zip(q.data())
        .map(|(lp, qq)| if *qq > 0.0 { -qq * lp } else { 0.0 })
        .sum();
    Ok(total / n as f64)
}

/// Mean entropy of the rows of `q`, with 0·log 0 = 0.
pub fn mean_entropy(q: &Tensor) -> Result<f64> {
    validate_distribution(q)?;
    let n = q.rows();
    let total: f64 = q.data().iter().map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 }).sum();
    Ok(total / n as f64)
}
