//! Central finite-difference verification of tape gradients.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Max over coordinates of `|analytic − numeric| / max(1, |analytic|, |numeric|)`
/// for a scalar function of one tensor.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), h)
}

/// Same as [`grad_check`] over several input tensors at once.
pub fn grad_check_many<F>(f: F, points: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("step must be positive, got {h}")));
    }
    let analytic = analytic_gradients(&f, points)?;
    let mut worst = 0.0f64;
    let mut probe = points.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..probe[t].len() {
            let orig = probe[t].data()[i];
            probe[t].data_mut()[i] = orig + h;
            let up = evaluate(&f, &probe)?;
            probe[t].data_mut()[i] = orig - h;
            let down = evaluate(&f, &probe)?;
            probe[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Gradients of `f` at `points` by one reverse sweep.
pub fn analytic_gradients<F>(f: &F, points: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = points
        .iter()
        .map(|p| tape.leaf(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    check_scalar(tape.value(out))?;
    tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(points)
        .map(|(&v, p)| tape.take_grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect())
}

fn evaluate<F>(f: &F, points: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = points
        .iter()
        .map(|p| tape.constant(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    check_scalar(value)?;
    if !value.item().is_finite() {
        return Err(Error::NonFinite("grad_check"));
    }
    Ok(value.item())
}

fn check_scalar(t: &Tensor) -> Result<()> {
    if t.len() == 1 {
        Ok(())
    } else {
        Err(Error::NonScalarLoss(t.shape().to_vec()))
    }
}
