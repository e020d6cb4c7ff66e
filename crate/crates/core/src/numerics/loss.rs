use crate::error::{Error, Result};
use crate::numerics::{Mlp, ParamSet, Tensor};

/// Registered losses for [`forward_backward`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Per-sample sum of squared errors, averaged over the batch.
    SquaredError,
    /// Softmax followed by cross-entropy against integer labels, batch mean.
    SoftmaxCrossEntropy,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    Values(Tensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub targets: Targets,
}

impl Batch {
    pub fn labelled(inputs: Tensor, labels: Vec<usize>) -> Self {
        Batch {
            inputs,
            targets: Targets::Labels(labels),
        }
    }

    pub fn regression(inputs: Tensor, values: Tensor) -> Self {
        Batch {
            inputs,
            targets: Targets::Values(values),
        }
    }
}

/// Row-wise softmax with max-shift.
pub fn softmax(logits: &Tensor) -> Tensor {
    let c = logits.cols();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Row-wise log-softmax with max-shift.
pub fn log_softmax(logits: &Tensor) -> Tensor {
    let c = logits.cols();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape(format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::shape(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (rows, c) = (logits.rows(), logits.cols());
    check_labels(labels, rows, c)?;
    if rows == 0 {
        return Err(Error::shape("cross-entropy on an empty batch"));
    }
    let logp = log_softmax(logits);
    let mut grad = softmax(logits);
    let scale = 1.0 / rows as f64;
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        loss -= logp.row(i)[y];
        grad.row_mut(i)[y] -= 1.0;
    }
    grad.data_mut().iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

/// Batch mean of per-row squared error sums, with gradient w.r.t. `pred`.
pub fn squared_error(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let rows = pred.rows().max(1) as f64;
    let diff = pred.zip_map(target, |p, t| p - t)?;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / rows;
    Ok((loss, diff.scale(2.0 / rows)))
}

/// Loss and parameter gradients of `net` on `batch`.
pub fn forward_backward(
    net: &Mlp,
    params: &ParamSet,
    batch: &Batch,
    loss: LossKind,
) -> Result<(f64, ParamSet)> {
    net.check_params(params)?;
    let tape = net.forward(params, &batch.inputs)?;
    let (value, grad_out) = match (loss, &batch.targets) {
        (LossKind::SoftmaxCrossEntropy, Targets::Labels(y)) => softmax_cross_entropy(tape.output(), y)?,
        (LossKind::SquaredError, Targets::Values(t)) => squared_error(tape.output(), t)?,
        (kind, _) => {
            return Err(Error::invalid(format!("{kind:?} does not accept these targets")));
        }
    };
    if !value.is_finite() {
        return Err(Error::non_finite(format!("{loss:?} loss")));
    }
    let mut grads = params.zeros_like();
    net.backward(params, &tape, &grad_out, &mut grads)?;
    Ok((value, grads))
}
