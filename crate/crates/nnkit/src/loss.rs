use crate::error::{mismatch, NnError, Result};
use crate::tensor::Tensor;

const LOG_FLOOR: f64 = 1e-12;
const STOCHASTIC_TOL: f64 = 1e-9;

/// Mean categorical cross entropy `-(1/N) Σ_n Σ_j y_nj ln max(ŷ_nj, 1e-12)`.
///
/// `predictions` and `targets` are `[N, classes]`; prediction rows must be
/// probability distributions.
pub fn cross_entropy(predictions: &Tensor, targets: &Tensor) -> Result<f64> {
    predictions.expect_rank("cross_entropy", 2)?;
    if predictions.shape() != targets.shape() {
        return Err(mismatch("cross_entropy", predictions.shape(), targets.shape()));
    }
    let (n, width) = (predictions.shape()[0], predictions.shape()[1]);
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for row in 0..n {
        let p = predictions.row(row);
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(NnError::NonStochastic {
                op: "cross_entropy",
                row,
                sum,
            });
        }
        for j in 0..width {
            let y = targets.row(row)[j];
            if y != 0.0 {
                total -= y * p[j].max(LOG_FLOOR).ln();
            }
        }
    }
    Ok(total / n as f64)
}

/// Gradient of the mean cross entropy with respect to the softmax logits: `(ŷ - y) / N`.
pub fn softmax_cross_entropy_grad(probabilities: &Tensor, targets: &Tensor) -> Result<Tensor> {
    if probabilities.shape() != targets.shape() {
        return Err(mismatch("softmax_cross_entropy_grad", probabilities.shape(), targets.shape()));
    }
    let n = probabilities.shape().first().copied().unwrap_or(0).max(1) as f64;
    probabilities.zip_map(targets, "softmax_cross_entropy_grad", |p, y| (p - y) / n)
}

/// One-hot rows for binary labels.
pub fn one_hot(labels: &[u8]) -> Tensor {
    let mut data = Vec::with_capacity(labels.len() * 2);
    for &y in labels {
        if y == 0 {
            data.extend_from_slice(&[1.0, 0.0]);
        } else {
            data.extend_from_slice(&[0.0, 1.0]);
        }
    }
    Tensor::new(vec![labels.len(), 2], data).expect("two entries per label")
}
