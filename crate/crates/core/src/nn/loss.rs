//! Scalar losses. Each returns the batch-mean loss (accumulated in `f64`)
//! and its gradient with respect to the prediction.

use super::{NnError, Tensor};

/// Floor applied to log terms, matching the usual binary cross-entropy clamp.
const LOG_FLOOR: f64 = -100.0;

fn clamped_ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln().max(LOG_FLOOR)
    } else {
        LOG_FLOOR
    }
}

/// Softmax cross-entropy on logits `[B, K]` against integer labels.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor), NnError> {
    let (b, k) = (logits.batch(), logits.row_len());
    if labels.len() != b {
        return Err(NnError::ShapeMismatch {
            layer: "cross_entropy".into(),
            expected: vec![b],
            actual: vec![labels.len()],
        });
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let label = label as usize;
        if label >= k {
            return Err(NnError::BadLabel { label, classes: k });
        }
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[label] as f64;
        let g = grad.row_mut(i);
        for (j, gv) in g.iter_mut().enumerate() {
            let p = (row[j] as f64 - log_z).exp();
            let t = if j == label { 1.0 } else { 0.0 };
            *gv = ((p - t) / b as f64) as f32;
        }
    }
    Ok((total / b as f64, grad))
}

/// Mean squared error over every element.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor), NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::ShapeMismatch {
            layer: "mse".into(),
            expected: target.shape().to_vec(),
            actual: pred.shape().to_vec(),
        });
    }
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0f64;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p as f64 - t as f64;
        total += d * d;
        *g = (2.0 * d / n) as f32;
    }
    Ok((total / n, grad))
}

/// Mean of `-log p` (`target_one`) or `-log(1 - p)` over probabilities.
pub fn binary_cross_entropy(probs: &Tensor, target_one: bool) -> (f64, Tensor) {
    let n = probs.len() as f64;
    let mut grad = Tensor::zeros(probs.shape());
    let mut total = 0.0f64;
    for (g, &p) in grad.data_mut().iter_mut().zip(probs.data()) {
        let p = p as f64;
        let (loss, d) = if target_one {
            (-clamped_ln(p), -1.0 / p.max(1e-12))
        } else {
            (-clamped_ln(1.0 - p), 1.0 / (1.0 - p).max(1e-12))
        };
        total += loss;
        *g = (d / n) as f32;
    }
    (total / n, grad)
}

/// Batch mean of `log p`, with the same clamp as the losses.
pub fn mean_log(probs: &Tensor) -> f64 {
    probs.data().iter().map(|&p| clamped_ln(p as f64)).sum::<f64>() / probs.len() as f64
}

/// Batch mean of `log(1 - p)`.
pub fn mean_log_complement(probs: &Tensor) -> f64 {
    probs.data().iter().map(|&p| clamped_ln(1.0 - p as f64)).sum::<f64>() / probs.len() as f64
}
