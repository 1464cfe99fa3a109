use super::{Result, Tensor, TensorError};

/// Numerically stable softmax over a flat vector.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(TensorError::Empty { op: "softmax" });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / sum).collect())
}

/// Softmax cross-entropy of `logits` against the class `label`.
///
/// Returns the loss and its gradient with respect to the logits
/// (`softmax(logits) − onehot(label)`).
pub fn cross_entropy_loss(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let z = logits.data();
    if z.is_empty() {
        return Err(TensorError::Empty { op: "cross_entropy" });
    }
    if label >= z.len() {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            dim: "label",
            expected: z.len(),
            found: label,
        });
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - z[label];
    let mut grad: Vec<f64> = z.iter().map(|&v| (v - log_sum).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}
