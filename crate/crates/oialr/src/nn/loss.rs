//! Loss functions returning (scalar loss, gradient w.r.t. the input).
//!
//! Gradients carry the mean-over-batch scaling, so layer backprop never
//! rescales.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Mean label-smoothed cross entropy over the batch. Targets are class
/// indices; the gradient is `(softmax(z) - q) / batch` with the smoothed
/// target distribution `q`.
pub fn cross_entropy_loss(
    logits: &Matrix,
    targets: &[usize],
    label_smoothing: f64,
) -> Result<(f64, Matrix)> {
    let (batch, classes) = logits.shape();
    if targets.len() != batch {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy_loss",
            lhs: (batch, classes),
            rhs: (targets.len(), 1),
        });
    }
    if !(0.0..1.0).contains(&label_smoothing) {
        return Err(Error::Config(format!(
            "label smoothing must lie in [0, 1), got {label_smoothing}"
        )));
    }
    if !logits.all_finite() {
        return Err(Error::NonFiniteInput {
            op: "cross_entropy_loss",
        });
    }
    let off = label_smoothing / classes as f64;
    let on = 1.0 - label_smoothing + off;
    let mut grad = Matrix::zeros(batch, classes);
    let mut loss = 0.0;
    for (i, &target) in targets.iter().enumerate() {
        if target >= classes {
            return Err(Error::Data(format!(
                "class index {target} out of range for {classes} classes"
            )));
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        // loss_i = -sum_c q_c (z_c - lse); q is `on` at the target and
        // `off` elsewhere, summing to 1.
        let mut row_loss = lse;
        for (c, &z) in row.iter().enumerate() {
            let q = if c == target { on } else { off };
            row_loss -= q * z;
            grad.set(i, c, ((z - lse).exp() - q) / batch as f64);
        }
        loss += row_loss;
    }
    Ok((loss / batch as f64, grad))
}

/// Mean squared error over all elements, gradient `2(p - t) / count`.
pub fn mse_loss(predictions: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if predictions.shape() != targets.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse_loss",
            lhs: predictions.shape(),
            rhs: targets.shape(),
        });
    }
    let count = (predictions.rows() * predictions.cols()) as f64;
    let mut grad = predictions.clone();
    let mut loss = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(targets.data()) {
        let diff = *g - t;
        loss += diff * diff;
        *g = 2.0 * diff / count;
    }
    Ok((loss / count, grad))
}

/// Fraction of rows whose argmax matches the target (ties to the lowest
/// index).
pub fn accuracy(logits: &Matrix, targets: &[usize]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    for (i, &target) in targets.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0usize;
        for (c, &z) in row.iter().enumerate() {
            if z > row[best] {
                best = c;
            }
        }
        if best == target {
            hits += 1;
        }
    }
    hits as f64 / targets.len() as f64
}
