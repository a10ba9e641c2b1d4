//! Elementwise activations and the row softmax, each with its gradient.

use crate::error::{mismatch, Result};
use crate::tensor::Tensor;

#[inline]
pub fn sigmoid_scalar(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient through ReLU given the layer input and upstream gradient.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.zip_map(grad_out, "relu_backward", |x, g| if x > 0.0 { g } else { 0.0 })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Takes the sigmoid *output*.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    output.zip_map(grad_out, "sigmoid_backward", |y, g| g * y * (1.0 - y))
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Takes the tanh *output*.
pub fn tanh_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    output.zip_map(grad_out, "tanh_backward", |y, g| g * (1.0 - y * y))
}

pub(crate) fn softmax_rows_in_place(data: &mut [f64], width: usize) {
    for row in data.chunks_mut(width) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Softmax over the last axis.
pub fn softmax(x: &Tensor) -> Tensor {
    let width = *x.shape().last().unwrap_or(&1);
    let mut out = x.clone();
    if width > 0 {
        softmax_rows_in_place(out.data_mut(), width);
    }
    out
}

/// Vector-Jacobian product of the softmax, given its output.
pub fn softmax_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if output.shape() != grad_out.shape() {
        return Err(mismatch("softmax_backward", output.shape(), grad_out.shape()));
    }
    let width = *output.shape().last().unwrap_or(&1);
    let mut grad = grad_out.clone();
    for (g, y) in grad.data_mut().chunks_mut(width).zip(output.data().chunks(width)) {
        let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
        for (gi, yi) in g.iter_mut().zip(y) {
            *gi = yi * (*gi - dot);
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clips_negatives() {
        let y = relu(&Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let y = softmax(&Tensor::from_vec(vec![0.0, 0.0]));
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 40.0, 0.1, 0.2, 0.3]).unwrap();
        let y = softmax(&x);
        for r in 0..2 {
            assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid_scalar(-1000.0), 0.0);
        assert_eq!(sigmoid_scalar(1000.0), 1.0);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        let x = Tensor::from_vec(vec![-1.3, -0.2, 0.4, 2.1]);
        let upstream = Tensor::from_vec(vec![0.7, -1.1, 0.3, 2.0]);
        let h = 1e-6;
        type Fwd = fn(&Tensor) -> Tensor;
        type Bwd = fn(&Tensor, &Tensor, &Tensor) -> Tensor;
        let cases: [(Fwd, Bwd); 3] = [
            (relu, |x, _y, g| relu_backward(x, g).unwrap()),
            (sigmoid, |_x, y, g| sigmoid_backward(y, g).unwrap()),
            (tanh, |_x, y, g| tanh_backward(y, g).unwrap()),
        ];
        for (fwd, bwd) in cases {
            let y = fwd(&x);
            let analytic = bwd(&x, &y, &upstream);
            for i in 0..x.len() {
                let mut plus = x.clone();
                plus.data_mut()[i] += h;
                let mut minus = x.clone();
                minus.data_mut()[i] -= h;
                let numeric = (fwd(&plus).data()[i] - fwd(&minus).data()[i]) / (2.0 * h) * upstream.data()[i];
                assert!((numeric - analytic.data()[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let x = Tensor::new(vec![1, 3], vec![0.3, -0.8, 1.2]).unwrap();
        let upstream = Tensor::new(vec![1, 3], vec![1.0, -0.5, 0.25]).unwrap();
        let y = softmax(&x);
        let analytic = softmax_backward(&y, &upstream).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            let f = |t: &Tensor| -> f64 { softmax(t).data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum() };
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((numeric - analytic.data()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_reports_shape_mismatch() {
        let err = relu_backward(&Tensor::from_vec(vec![1.0]), &Tensor::from_vec(vec![1.0, 2.0])).unwrap_err();
        assert!(err.to_string().contains("[1]") && err.to_string().contains("[2]"));
    }
}
