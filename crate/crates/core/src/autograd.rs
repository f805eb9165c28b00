//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every primitive in forward execution order. Handles
//! ([`Var`]) are plain indices into the tape, so the forward pass reads like
//! ordinary arithmetic and the tape is thrown away after each step.
//!
//! ```
//! use softdistill_core::autograd::Tape;
//! use softdistill_core::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![3.0])).unwrap();
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);
//! ```

use crate::error::{Error, Result};
use crate::tensor::{gemm, Operand, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    MatMul,
    AddBias,
    Relu,
    Exp,
    Log,
    Sum,
    Mean,
    Scale,
    LogSoftmax,
    JsDivergence,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::MatMul => "matmul",
            OpKind::AddBias => "add_bias",
            OpKind::Relu => "relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Scale => "scale",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::JsDivergence => "js_divergence",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(OpKind, usize, usize),
    Unary(OpKind, usize),
    Scale(usize, f64),
    /// Fused mean Jensen–Shannon divergence; caches the student probabilities.
    Js {
        logits: usize,
        target: usize,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
    op: Op,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.input(value, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.input(value, false)
    }

    fn input(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("input"));
        }
        Ok(self.push(value, requires_grad, Op::Leaf))
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, kind: OpKind, value: Tensor, requires_grad: bool, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(kind.name()));
        }
        Ok(self.push(value, requires_grad, op))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Applies a primitive by kind. Binary kinds take two operands, unary kinds one.
    pub fn apply(&mut self, kind: OpKind, operands: &[Var]) -> Result<Var> {
        let arity = |n: usize| {
            if operands.len() == n {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{} takes {n} operand(s), got {}",
                    kind.name(),
                    operands.len()
                )))
            }
        };
        match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                arity(2)?;
                self.elementwise(kind, operands[0], operands[1])
            }
            OpKind::MatMul => {
                arity(2)?;
                self.matmul(operands[0], operands[1])
            }
            OpKind::AddBias => {
                arity(2)?;
                self.add_bias(operands[0], operands[1])
            }
            OpKind::JsDivergence => {
                arity(2)?;
                self.js_divergence(operands[0], operands[1])
            }
            OpKind::Relu | OpKind::Exp | OpKind::Log => {
                arity(1)?;
                self.pointwise(kind, operands[0])
            }
            OpKind::Sum => {
                arity(1)?;
                self.sum(operands[0])
            }
            OpKind::Mean => {
                arity(1)?;
                self.mean(operands[0])
            }
            OpKind::LogSoftmax => {
                arity(1)?;
                self.log_softmax(operands[0])
            }
            OpKind::Scale => Err(Error::invalid("scale takes a factor; use Tape::scale")),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(OpKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(OpKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(OpKind::Mul, a, b)
    }

    fn elementwise(&mut self, kind: OpKind, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(Error::shape(kind.name(), format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let f: fn(f64, f64) -> f64 = match kind {
            OpKind::Add => |p, q| p + q,
            OpKind::Sub => |p, q| p - q,
            _ => |p, q| p * q,
        };
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.record(kind, value, rg, Op::Binary(kind, a.0, b.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.record(OpKind::MatMul, value, rg, Op::Binary(OpKind::MatMul, a.0, b.0))
    }

    /// `x[n×m] + bias[m]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.value(x).dims2("add_bias")?;
        let b = self.value(bias);
        if b.len() != m || b.shape().len() > 2 || (b.shape().len() == 2 && b.shape()[0] != 1) {
            return Err(Error::shape(
                "add_bias",
                format!("bias shape {:?} does not broadcast over {n}x{m}", b.shape()),
            ));
        }
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_exact_mut(m) {
            for (v, bb) in row.iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
        let rg = self.requires_grad(x) || self.requires_grad(bias);
        self.record(OpKind::AddBias, value, rg, Op::Binary(OpKind::AddBias, x.0, bias.0))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.pointwise(OpKind::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.pointwise(OpKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.pointwise(OpKind::Log, a)
    }

    fn pointwise(&mut self, kind: OpKind, a: Var) -> Result<Var> {
        let x = self.value(a);
        let value = match kind {
            OpKind::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
            OpKind::Exp => x.map(f64::exp),
            _ => x.map(f64::ln),
        };
        let rg = self.requires_grad(a);
        self.record(kind, value, rg, Op::Unary(kind, a.0))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.requires_grad(a);
        self.record(OpKind::Sum, value, rg, Op::Unary(OpKind::Sum, a.0))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let value = Tensor::scalar(x.sum() / x.len() as f64);
        let rg = self.requires_grad(a);
        self.record(OpKind::Mean, value, rg, Op::Unary(OpKind::Mean, a.0))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        if !factor.is_finite() {
            return Err(Error::NonFinite("scale"));
        }
        let value = self.value(a).map(|v| v * factor);
        let rg = self.requires_grad(a);
        self.record(OpKind::Scale, value, rg, Op::Scale(a.0, factor))
    }

    /// Row-wise log-softmax, stabilized by subtracting each row's maximum.
    pub fn log_softmax(&mut self, logits: Var) -> Result<Var> {
        let value = log_softmax_rows(self.value(logits))?;
        let rg = self.requires_grad(logits);
        self.record(OpKind::LogSoftmax, value, rg, Op::Unary(OpKind::LogSoftmax, logits.0))
    }

    /// Mean over rows of JS(softmax(logits) ‖ target), natural log.
    ///
    /// `target` rows must be probability distributions; no gradient flows into
    /// them.
    pub fn js_divergence(&mut self, logits: Var, target: Var) -> Result<Var> {
        let z = self.value(logits);
        let q = self.value(target);
        if !z.same_shape(q) {
            return Err(Error::shape(
                "js_divergence",
                format!("{:?} vs {:?}", z.shape(), q.shape()),
            ));
        }
        let (n, k) = z.dims2("js_divergence")?;
        if n == 0 {
            return Err(Error::shape("js_divergence", "empty batch"));
        }
        let probs = softmax_rows(z)?;
        let mut total = 0.0;
        for r in 0..n {
            total += js_row(&probs.data()[r * k..(r + 1) * k], q.row(r));
        }
        let value = Tensor::scalar(total / n as f64);
        let rg = self.requires_grad(logits);
        self.record(
            OpKind::JsDivergence,
            value,
            rg,
            Op::Js {
                logits: logits.0,
                target: target.0,
                probs,
            },
        )
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    ///
    /// Calling this twice without [`Tape::zero_grad`] adds the two gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    match &mut self.nodes[i].grad {
                        Some(acc) => acc.add_assign_slice(g.data()),
                        slot @ None => *slot = Some(g),
                    }
                    continue;
                }
                Op::Binary(kind, a, b) => {
                    let (a, b) = (*a, *b);
                    self.backward_binary(*kind, a, b, &g, &mut grads)?;
                }
                Op::Unary(kind, a) => {
                    let a = *a;
                    if self.nodes[a].requires_grad {
                        let ga = self.backward_unary(*kind, i, a, &g)?;
                        accumulate(&mut grads, a, ga);
                    }
                }
                Op::Scale(a, c) => {
                    let a = *a;
                    if self.nodes[a].requires_grad {
                        accumulate(&mut grads, a, g.map(|v| v * c));
                    }
                }
                Op::Js { logits, target, probs } => {
                    let (z, t) = (*logits, *target);
                    if self.nodes[z].requires_grad {
                        let gz = js_backward(probs, &self.nodes[t].value, g.item())?;
                        accumulate(&mut grads, z, gz);
                    }
                }
            }
        }
        Ok(())
    }

    fn backward_binary(
        &self,
        kind: OpKind,
        a: usize,
        b: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        let (ra, rb) = (self.nodes[a].requires_grad, self.nodes[b].requires_grad);
        match kind {
            OpKind::Add => {
                if ra {
                    accumulate(grads, a, g.clone());
                }
                if rb {
                    accumulate(grads, b, g.clone());
                }
            }
            OpKind::Sub => {
                if ra {
                    accumulate(grads, a, g.clone());
                }
                if rb {
                    accumulate(grads, b, g.map(|v| -v));
                }
            }
            OpKind::Mul => {
                if ra {
                    accumulate(grads, a, zip_with(g, vb, |x, y| x * y));
                }
                if rb {
                    accumulate(grads, b, zip_with(g, va, |x, y| x * y));
                }
            }
            OpKind::MatMul => {
                let (m, k) = va.dims2("matmul")?;
                let n = vb.cols();
                if ra {
                    let mut ga = vec![0.0; m * k];
                    gemm(
                        Operand::plain(g.data(), m, n),
                        Operand::transposed(vb.data(), k, n),
                        &mut ga,
                        false,
                    );
                    accumulate(grads, a, Tensor::matrix(m, k, ga)?);
                }
                if rb {
                    let mut gb = vec![0.0; k * n];
                    gemm(
                        Operand::transposed(va.data(), m, k),
                        Operand::plain(g.data(), m, n),
                        &mut gb,
                        false,
                    );
                    accumulate(grads, b, Tensor::matrix(k, n, gb)?);
                }
            }
            OpKind::AddBias => {
                if ra {
                    accumulate(grads, a, g.clone());
                }
                if rb {
                    let m = g.cols();
                    let mut gb = vec![0.0; m];
                    for row in g.data().chunks_exact(m) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(grads, b, Tensor::new(vb.shape().to_vec(), gb)?);
                }
            }
            other => unreachable!("{} is not binary", other.name()),
        }
        Ok(())
    }

    fn backward_unary(&self, kind: OpKind, out: usize, a: usize, g: &Tensor) -> Result<Tensor> {
        let x = &self.nodes[a].value;
        let y = &self.nodes[out].value;
        Ok(match kind {
            OpKind::Relu => zip_with(g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
            OpKind::Exp => zip_with(g, y, |gv, yv| gv * yv),
            OpKind::Log => zip_with(g, x, |gv, xv| gv / xv),
            OpKind::Sum => Tensor::full(x.shape(), g.item()),
            OpKind::Mean => Tensor::full(x.shape(), g.item() / x.len() as f64),
            OpKind::LogSoftmax => {
                let (n, k) = y.dims2("log_softmax")?;
                let mut out = vec![0.0; n * k];
                for r in 0..n {
                    let gr = &g.data()[r * k..(r + 1) * k];
                    let yr = &y.data()[r * k..(r + 1) * k];
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..k {
                        out[r * k + j] = gr[j] - yr[j].exp() * gsum;
                    }
                }
                Tensor::matrix(n, k, out)?
            }
            other => unreachable!("{} is not unary", other.name()),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut grads[idx] {
        Some(acc) => acc.add_assign_slice(g.data()),
        slot @ None => *slot = Some(g),
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// Row-wise log-softmax of a `batch × K` matrix (K ≥ 2).
pub fn log_softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (n, k) = logits.dims2("log_softmax")?;
    if k < 2 {
        return Err(Error::shape("log_softmax", format!("need at least 2 classes, got {k}")));
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("log_softmax"));
    }
    let mut out = Vec::with_capacity(n * k);
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    Tensor::matrix(n, k, out)
}

/// Row-wise softmax of a `batch × K` matrix (K ≥ 2).
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    Ok(log_softmax_rows(logits)?.map(f64::exp))
}

/// JS(p ‖ q) for one pair of distributions, with 0·log 0 = 0.
pub(crate) fn js_row(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pk, &qk) in p.iter().zip(q) {
        let m = 0.5 * (pk + qk);
        if pk > 0.0 {
            acc += pk * (pk / m).ln();
        }
        if qk > 0.0 {
            acc += qk * (qk / m).ln();
        }
    }
    0.5 * acc
}

fn js_backward(probs: &Tensor, target: &Tensor, upstream: f64) -> Result<Tensor> {
    let (n, k) = probs.dims2("js_divergence")?;
    let scale = upstream / n as f64;
    let mut out = vec![0.0; n * k];
    let mut dp = vec![0.0; k];
    for r in 0..n {
        let p = &probs.data()[r * k..(r + 1) * k];
        let q = target.row(r);
        // dJS/dp_j = ½ ln(p_j / m_j); terms with p_j = 0 vanish through the softmax Jacobian.
        let mut inner = 0.0;
        for j in 0..k {
            dp[j] = if p[j] > 0.0 {
                0.5 * (2.0 * p[j] / (p[j] + q[j])).ln()
            } else {
                0.0
            };
            inner += p[j] * dp[j];
        }
        for j in 0..k {
            out[r * k + j] = scale * p[j] * (dp[j] - inner);
        }
    }
    Tensor::matrix(n, k, out)
}
