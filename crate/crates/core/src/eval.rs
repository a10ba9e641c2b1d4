//! Stratified k-fold protocol and the ACC, AUC and TAC metrics.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result, SlnError};
use crate::features::FeatureTable;
use crate::predictors::{self, ModelSpec};

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Child seed for stream `index` of `root` (splitmix64 finalizer).
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut z = root ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Test pair indices per fold, sorted.
    pub test: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn train(&self, fold: usize) -> Vec<usize> {
        let mut train: Vec<usize> = self
            .test
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, t)| t.iter().copied())
            .collect();
        train.sort_unstable();
        train
    }
}

/// Class-stratified shuffled partition of pairs by their final label.
pub fn make_folds(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(SlnError::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&p| labels[p] == 1).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&p| labels[p] != 1).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(SlnError::SingleClass);
    }
    if pos.len() < k {
        return Err(SlnError::TooFewPositives { positives: pos.len(), k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut test = vec![Vec::new(); k];
    for (j, &p) in pos.iter().enumerate() {
        test[j % k].push(p);
    }
    // Negatives continue the deal so fold sizes differ by at most one.
    let offset = pos.len() % k;
    for (j, &p) in neg.iter().enumerate() {
        test[(j + offset) % k].push(p);
    }
    for t in &mut test {
        t.sort_unstable();
    }
    Ok(FoldPlan { k, seed, test })
}

fn check_shapes(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(SlnError::InvalidArgument(format!("{} score series for {} label series", scores.len(), labels.len())));
    }
    for (k, (s, y)) in scores.iter().zip(labels).enumerate() {
        if s.len() != y.len() {
            return Err(SlnError::InvalidArgument(format!(
                "pair {k} has predictions for {} of {} intervals",
                s.len(),
                y.len()
            )));
        }
    }
    Ok(())
}

/// Fraction of `(pair, interval)` predictions that match the labels after thresholding.
pub fn acc(scores: &[Vec<f64>], labels: &[Vec<u8>], threshold: f64) -> Result<f64> {
    check_shapes(scores, labels)?;
    let (mut hit, mut n) = (0usize, 0usize);
    for (s, y) in scores.iter().zip(labels) {
        for (&p, &t) in s.iter().zip(y) {
            hit += usize::from(u8::from(p >= threshold) == t);
            n += 1;
        }
    }
    if n == 0 {
        return Err(SlnError::InvalidArgument("no predictions to score".into()));
    }
    Ok(hit as f64 / n as f64)
}

/// Mann-Whitney AUC with midranks for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(SlnError::InvalidArgument(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(SlnError::InvalidArgument("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(SlnError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            if labels[o] == 1 {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// ROC points `(fpr, tpr)` from a sweep over the distinct scores, highest first.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 || scores.len() != labels.len() {
        return Err(SlnError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    for (k, &o) in order.iter().enumerate() {
        if labels[o] == 1 {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        if k + 1 == order.len() || scores[order[k + 1]] != scores[o] {
            curve.push((fp / n_neg, tp / n_pos));
        }
    }
    Ok(curve)
}

/// First interval (1-based) whose score reaches the threshold.
pub fn predicted_formation(scores: &[f64], threshold: f64) -> Option<usize> {
    scores.iter().position(|&s| s >= threshold).map(|p| p + 1)
}

/// Share of `(predicted, actual)` formation times within `w` intervals of each
/// other; `None` when there are no pairs.
pub fn tac(times: &[(usize, usize)], w: usize) -> Option<f64> {
    if times.is_empty() {
        return None;
    }
    let hits = times.iter().filter(|&&(p, a)| p.abs_diff(a) <= w).count();
    Some(hits as f64 / times.len() as f64)
}

/// Formation-time pairs over test links that form and are predicted to form.
pub fn formation_times(scores: &[Vec<f64>], labels: &[Vec<u8>], threshold: f64) -> Vec<(usize, usize)> {
    scores
        .iter()
        .zip(labels)
        .filter_map(|(s, y)| {
            let actual = y.iter().position(|&v| v == 1)? + 1;
            let predicted = predicted_formation(s, threshold)?;
            Some((predicted, actual))
        })
        .collect()
}

/// `TAC(w)` for `w = 0..=intervals`.
pub fn tac_curve(times: &[(usize, usize)], intervals: usize) -> Vec<Option<f64>> {
    (0..=intervals).map(|w| tac(times, w)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub repeat: usize,
    pub fold: usize,
    pub acc: f64,
    pub auc: f64,
    /// `tac[w]`; `None` when no test link both forms and is predicted to.
    pub tac: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub dataset: String,
    pub intervals: usize,
    pub folds: Vec<FoldMetrics>,
}

/// Mean and sample standard deviation; `None` for an empty input.
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, sd))
}

impl MetricReport {
    pub fn acc(&self) -> (f64, f64) {
        mean_sd(&self.folds.iter().map(|f| f.acc).collect::<Vec<_>>()).unwrap_or((f64::NAN, f64::NAN))
    }

    pub fn auc(&self) -> (f64, f64) {
        mean_sd(&self.folds.iter().map(|f| f.auc).collect::<Vec<_>>()).unwrap_or((f64::NAN, f64::NAN))
    }

    /// Over the folds where `TAC(w)` is defined.
    pub fn tac(&self, w: usize) -> Option<(f64, f64)> {
        let values: Vec<f64> = self.folds.iter().filter_map(|f| f.tac.get(w).copied().flatten()).collect();
        mean_sd(&values)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["model".to_string(), "dataset".into(), "fold".into(), "acc".into(), "auc".into()];
        header.extend((0..=self.intervals).map(|k| format!("tac_w{k}")));
        w.write_record(&header)?;
        let k = self.folds.iter().map(|f| f.fold + 1).max().unwrap_or(0);
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
        for f in &self.folds {
            let mut row = vec![self.model.clone(), self.dataset.clone(), (f.repeat * k + f.fold).to_string()];
            row.push(format!("{}", f.acc));
            row.push(format!("{}", f.auc));
            row.extend(f.tac.iter().map(|&t| fmt(t)));
            w.write_record(&row)?;
        }
        for (label, pick) in [("mean", 0usize), ("sd", 1)] {
            let choose = |ms: (f64, f64)| if pick == 0 { ms.0 } else { ms.1 };
            let mut row = vec![self.model.clone(), self.dataset.clone(), label.to_string()];
            row.push(format!("{}", choose(self.acc())));
            row.push(format!("{}", choose(self.auc())));
            row.extend((0..=self.intervals).map(|w| fmt(self.tac(w).map(choose))));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| SlnError::Format(e.to_string()))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).at(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub k: usize,
    pub seed: u64,
    pub repeats: usize,
    pub threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_FOLDS,
            seed: 0,
            repeats: 1,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Fits on the fold's training pairs and scores its test pairs.
pub fn evaluate_fold(spec: &ModelSpec, table: &FeatureTable, plan: &FoldPlan, fold: usize, threshold: f64) -> Result<FoldMetrics> {
    let train = plan.train(fold);
    let test = &plan.test[fold];
    let model = predictors::fit(spec, table, &train)?;
    let scores = model.predict(table, test)?;
    let labels: Vec<Vec<u8>> = test.iter().map(|&p| table.series[p].labels.clone()).collect();
    let flat_scores: Vec<f64> = scores.iter().flatten().copied().collect();
    let flat_labels: Vec<u8> = labels.iter().flatten().copied().collect();
    let times = formation_times(&scores, &labels, threshold);
    Ok(FoldMetrics {
        repeat: 0,
        fold,
        acc: acc(&scores, &labels, threshold)?,
        auc: auc(&flat_scores, &flat_labels)?,
        tac: tac_curve(&times, table.intervals),
    })
}

/// Runs every fold of `plan` concurrently with fold seeds derived from `spec.seed`.
pub fn evaluate(spec: &ModelSpec, table: &FeatureTable, plan: &FoldPlan, threshold: f64) -> Result<Vec<FoldMetrics>> {
    (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let spec = spec.clone().with_seed(derive_seed(spec.seed, fold as u64));
            evaluate_fold(&spec, table, plan, fold, threshold)
        })
        .collect()
}

/// Repeated stratified k-fold evaluation; repeat `r` uses fold seed `derive_seed(seed, r)`.
pub fn evaluate_repeated(spec: &ModelSpec, table: &FeatureTable, dataset: &str, options: EvalOptions) -> Result<MetricReport> {
    let labels = table.final_labels();
    let mut folds = Vec::with_capacity(options.k * options.repeats.max(1));
    for r in 0..options.repeats.max(1) {
        let plan = make_folds(&labels, options.k, derive_seed(options.seed, r as u64))?;
        let spec = spec.clone().with_seed(derive_seed(spec.seed, 1 << 32 | r as u64));
        for mut m in evaluate(&spec, table, &plan, options.threshold)? {
            m.repeat = r;
            folds.push(m);
        }
    }
    Ok(MetricReport {
        model: spec.kind.name().to_string(),
        dataset: dataset.to_string(),
        intervals: table.intervals,
        folds,
    })
}
