use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlnError};
use crate::features::{column_index, select, FeatureTable, Standardizer};

/// Min-max normalized resource allocation over every `(pair, interval)` row scored.
///
/// A constant column scores 0 everywhere.
pub fn predict_re(table: &FeatureTable, pairs: &[usize]) -> Vec<Vec<f64>> {
    let re = column_index("re").expect("re is a feature column");
    let values = pairs.iter().flat_map(|&p| table.series[p].vectors.iter().map(move |v| v[re]));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let span = hi - lo;
    if !(span > 0.0) {
        log::warn!("resource allocation is constant over the scored rows; all scores are 0");
    }
    pairs
        .iter()
        .map(|&p| {
            table.series[p]
                .vectors
                .iter()
                .map(|v| if span > 0.0 { (v[re] - lo) / span } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Standardized design rows for every `(pair, interval)` of the training pairs.
pub(crate) fn design(table: &FeatureTable, pairs: &[usize], columns: &[usize]) -> (Vec<Vec<f64>>, Vec<u8>, Standardizer) {
    let raw: Vec<Vec<f64>> = pairs
        .iter()
        .flat_map(|&p| table.series[p].vectors.iter().map(|v| select(v, columns)))
        .collect();
    let y = pairs.iter().flat_map(|&p| table.series[p].labels.iter().copied()).collect();
    let std = Standardizer::fit(raw.iter().map(Vec::as_slice), columns.len());
    let x = raw
        .iter()
        .map(|r| {
            let mut out = Vec::with_capacity(r.len());
            std.apply(r, &mut out);
            out
        })
        .collect();
    (x, y, std)
}

/// `ŷ = σ(wᵀx + b)` on standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
}

fn sigmoid(a: f64) -> f64 {
    nnkit::activation::sigmoid_scalar(a)
}

impl LinearModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }

    pub(crate) fn predict(&self, table: &FeatureTable, pairs: &[usize], columns: &[usize], std: &Standardizer) -> Vec<Vec<f64>> {
        let mut buf = Vec::with_capacity(columns.len());
        pairs
            .iter()
            .map(|&p| {
                table.series[p]
                    .vectors
                    .iter()
                    .map(|v| {
                        buf.clear();
                        std.apply(&select(v, columns), &mut buf);
                        self.score(&buf)
                    })
                    .collect()
            })
            .collect()
    }
}

fn split_classes(x: &[Vec<f64>], y: &[u8]) -> Result<(Vec<usize>, Vec<usize>)> {
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&i| y[i] != 1).collect();
    if pos.is_empty() || neg.is_empty() || x.len() != y.len() {
        return Err(SlnError::SingleClass);
    }
    Ok((pos, neg))
}

/// Fisher discriminant with pooled covariance plus `1e-6 I`; the threshold sits
/// at the projected midpoint of the class means.
pub fn fit_linda(x: &[Vec<f64>], y: &[u8]) -> Result<LinearModel> {
    let (pos, neg) = split_classes(x, y)?;
    let d = x[0].len();
    let mean = |idx: &[usize]| {
        let mut m = DVector::zeros(d);
        for &i in idx {
            m += DVector::from_column_slice(&x[i]);
        }
        m / idx.len() as f64
    };
    let (mu1, mu0) = (mean(&pos), mean(&neg));
    let mut s = DMatrix::<f64>::zeros(d, d);
    for (idx, mu) in [(&pos, &mu1), (&neg, &mu0)] {
        for &i in idx.iter() {
            let c = DVector::from_column_slice(&x[i]) - mu;
            s += &c * c.transpose();
        }
    }
    let dof = (x.len() as f64 - 2.0).max(1.0);
    s /= dof;
    s += DMatrix::identity(d, d) * 1e-6;
    let w = s
        .lu()
        .solve(&(&mu1 - &mu0))
        .ok_or_else(|| SlnError::InvalidArgument("singular pooled covariance".into()))?;
    let c = w.dot(&((&mu1 + &mu0) * 0.5));
    Ok(LinearModel {
        w: w.iter().copied().collect(),
        b: -c,
    })
}

/// Class-balanced soft-margin objective
/// `λ/2 ‖w‖² + (1/N) Σ c_n max(0, 1 - y_n (wᵀx_n + b))`, `λ = 1/(C N)`,
/// `c_n = N / (2 N_class)`.
pub fn svm_objective(model: &LinearModel, x: &[Vec<f64>], y: &[u8], c: f64) -> f64 {
    let n = x.len() as f64;
    let n_pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let weights = [n / (2.0 * (n - n_pos)), n / (2.0 * n_pos)];
    let lambda = 1.0 / (c * n);
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let s = if yi == 1 { 1.0 } else { -1.0 };
            weights[usize::from(yi == 1)] * (1.0 - s * model.decision(xi)).max(0.0)
        })
        .sum();
    0.5 * lambda * model.w.iter().map(|w| w * w).sum::<f64>() + hinge / n
}

/// Full-batch subgradient descent with step `1/√t`; returns the iterate with the
/// lowest objective and the objective after every iteration.
pub fn fit_svm(x: &[Vec<f64>], y: &[u8], c: f64, iterations: usize) -> Result<(LinearModel, Vec<f64>)> {
    let (pos, _) = split_classes(x, y)?;
    if !(c > 0.0) {
        return Err(SlnError::InvalidArgument(format!("SVM C must be positive, got {c}")));
    }
    let d = x[0].len();
    let n = x.len() as f64;
    let n_pos = pos.len() as f64;
    let weights = [n / (2.0 * (n - n_pos)), n / (2.0 * n_pos)];
    let lambda = 1.0 / (c * n);
    let mut model = LinearModel { w: vec![0.0; d], b: 0.0 };
    let mut best = (svm_objective(&model, x, y, c), model.clone());
    let mut log = Vec::with_capacity(iterations);
    for t in 1..=iterations {
        let mut gw: Vec<f64> = model.w.iter().map(|w| lambda * w).collect();
        let mut gb = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let s = if yi == 1 { 1.0 } else { -1.0 };
            if s * model.decision(xi) < 1.0 {
                let k = weights[usize::from(yi == 1)] * s / n;
                for (g, v) in gw.iter_mut().zip(xi) {
                    *g -= k * v;
                }
                gb -= k;
            }
        }
        let eta = 1.0 / (t as f64).sqrt();
        for (w, g) in model.w.iter_mut().zip(&gw) {
            *w -= eta * g;
        }
        model.b -= eta * gb;
        let obj = svm_objective(&model, x, y, c);
        log.push(obj);
        if obj < best.0 {
            best = (obj, model.clone());
        }
    }
    Ok((best.1, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_linda_threshold_is_the_midpoint() {
        let x = vec![vec![-1.0], vec![3.0]];
        let m = fit_linda(&x, &[0, 1]).unwrap();
        assert!(m.decision(&[1.0]).abs() < 1e-9);
        assert!(m.decision(&[1.1]) > 0.0 && m.decision(&[0.9]) < 0.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(fit_linda(&x, &[1, 1]), Err(SlnError::SingleClass)));
        assert!(matches!(fit_svm(&x, &[0, 0], 1.0, 10), Err(SlnError::SingleClass)));
    }

    #[test]
    fn svm_label_flip_negates_the_decision() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()]).collect();
        let y: Vec<u8> = (0..40).map(|i| u8::from((i * 7) % 5 < 2)).collect();
        let flipped: Vec<u8> = y.iter().map(|v| 1 - v).collect();
        let (a, _) = fit_svm(&x, &y, 1.0, 200).unwrap();
        let (b, _) = fit_svm(&x, &flipped, 1.0, 200).unwrap();
        for xi in &x {
            assert_eq!(a.decision(xi), -b.decision(xi));
        }
    }
}
