//! Two-layer GraphSAGE (mean aggregator) over learnable node embeddings with a
//! dot-product link decoder.

use nnkit::init::glorot_uniform;
use nnkit::AdamState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::error::{Result, SlnError};
use crate::features::FeatureTable;
use crate::graph::Snapshot;

const NEGATIVE_SEED_SALT: u64 = 0x2545_f491_4f6c_dd1d;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnnParams {
    pub dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl GnnParams {
    pub fn from_spec(spec: &ModelSpec) -> Self {
        Self {
            dim: spec.gnn_dim,
            negatives: spec.gnn_negatives,
            epochs: spec.epochs,
            lr: spec.lr,
            seed: spec.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    pub nodes: usize,
    pub dim: usize,
    /// Embeddings `[nodes, dim]`, then `W1 [dim, 2 dim]`, `b1`, `W2 [dim, 2 dim]`, `b2`.
    pub params: Vec<f64>,
}

struct Offsets {
    emb: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    len: usize,
}

fn offsets(nodes: usize, d: usize) -> Offsets {
    let emb = 0;
    let w1 = nodes * d;
    let b1 = w1 + 2 * d * d;
    let w2 = b1 + d;
    let b2 = w2 + 2 * d * d;
    Offsets { emb, w1, b1, w2, b2, len: b2 + d }
}

struct LayerCache {
    /// `[h, mean_neigh(h)]` rows, `[nodes, 2 dim]`.
    concat: Vec<f64>,
    /// Layer output after its activation.
    out: Vec<f64>,
}

/// `G(i - 1)` for every `i = 1..=L`, built from the table's labels.
pub fn prior_graphs(table: &FeatureTable) -> Vec<Snapshot> {
    let n = table.learners.len();
    (1..=table.intervals)
        .map(|i| {
            if i == 1 {
                return Snapshot::empty(n, 0);
            }
            let edges = table.series.iter().filter(|s| s.labels[i - 2] == 1).map(|s| (s.u, s.v));
            Snapshot::from_edges(n, i - 1, edges)
        })
        .collect()
}

impl GnnModel {
    pub fn new(nodes: usize, dim: usize, seed: u64) -> Self {
        let o = offsets(nodes, dim);
        let mut params = vec![0.0; o.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        glorot_uniform(&mut rng, dim, dim, &mut params[o.emb..o.w1]);
        glorot_uniform(&mut rng, 2 * dim, dim, &mut params[o.w1..o.b1]);
        glorot_uniform(&mut rng, 2 * dim, dim, &mut params[o.w2..o.b2]);
        Self { nodes, dim, params }
    }

    fn layer(&self, params: &[f64], g: &Snapshot, h: &[f64], w: usize, b: usize, relu: bool) -> LayerCache {
        let d = self.dim;
        let mut concat = vec![0.0; self.nodes * 2 * d];
        for u in 0..self.nodes {
            let row = &mut concat[u * 2 * d..(u + 1) * 2 * d];
            row[..d].copy_from_slice(&h[u * d..(u + 1) * d]);
            let neigh = g.neighbors(u);
            if !neigh.is_empty() {
                let inv = 1.0 / neigh.len() as f64;
                for &k in neigh {
                    for c in 0..d {
                        row[d + c] += inv * h[k * d + c];
                    }
                }
            }
        }
        let mut out = vec![0.0; self.nodes * d];
        for u in 0..self.nodes {
            let x = &concat[u * 2 * d..(u + 1) * 2 * d];
            for r in 0..d {
                let wr = &params[w + r * 2 * d..w + (r + 1) * 2 * d];
                let mut z = params[b + r] + wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                if relu && z < 0.0 {
                    z = 0.0;
                }
                out[u * d + r] = z;
            }
        }
        LayerCache { concat, out }
    }

    fn layer_backward(&self, params: &[f64], g: &Snapshot, cache: &LayerCache, dz: &[f64], w: usize, b: usize, grad: &mut [f64]) -> Vec<f64> {
        let d = self.dim;
        let mut dh = vec![0.0; self.nodes * d];
        let mut dconcat = vec![0.0; 2 * d];
        for u in 0..self.nodes {
            let x = &cache.concat[u * 2 * d..(u + 1) * 2 * d];
            dconcat.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..d {
                let dzr = dz[u * d + r];
                if dzr == 0.0 {
                    continue;
                }
                grad[b + r] += dzr;
                for c in 0..2 * d {
                    grad[w + r * 2 * d + c] += dzr * x[c];
                    dconcat[c] += dzr * params[w + r * 2 * d + c];
                }
            }
            for c in 0..d {
                dh[u * d + c] += dconcat[c];
            }
            let neigh = g.neighbors(u);
            if !neigh.is_empty() {
                let inv = 1.0 / neigh.len() as f64;
                for &k in neigh {
                    for c in 0..d {
                        dh[k * d + c] += inv * dconcat[d + c];
                    }
                }
            }
        }
        dh
    }

    fn embed_with(&self, params: &[f64], g: &Snapshot) -> (LayerCache, LayerCache) {
        let o = offsets(self.nodes, self.dim);
        let l1 = self.layer(params, g, &params[o.emb..o.w1], o.w1, o.b1, true);
        let l2 = self.layer(params, g, &l1.out, o.w2, o.b2, false);
        (l1, l2)
    }

    /// Final node representations on graph `g`, `[nodes, dim]`.
    pub fn embed(&self, g: &Snapshot) -> Vec<f64> {
        self.embed_with(&self.params, g).1.out
    }

    fn logit(&self, h: &[f64], u: usize, v: usize) -> f64 {
        let d = self.dim;
        h[u * d..(u + 1) * d].iter().zip(&h[v * d..(v + 1) * d]).map(|(a, b)| a * b).sum()
    }

    /// Mean binary cross entropy of `σ(h_u · h_v)` over `examples` on graph `g`.
    pub fn loss_at(&self, params: &[f64], g: &Snapshot, examples: &[(usize, usize, u8)]) -> f64 {
        let h = self.embed_with(params, g).1.out;
        let n = examples.len().max(1) as f64;
        examples
            .iter()
            .map(|&(u, v, y)| {
                let s = self.logit(&h, u, v);
                // log(1 + e^s) - y s, computed stably
                s.max(0.0) + (-s.abs()).exp().ln_1p() - f64::from(y) * s
            })
            .sum::<f64>()
            / n
    }

    pub fn loss_and_grad(&self, g: &Snapshot, examples: &[(usize, usize, u8)]) -> (f64, Vec<f64>) {
        let params = &self.params;
        let o = offsets(self.nodes, self.dim);
        let d = self.dim;
        let (l1, l2) = self.embed_with(params, g);
        let h = &l2.out;
        let n = examples.len().max(1) as f64;
        let mut loss = 0.0;
        let mut dh2 = vec![0.0; self.nodes * d];
        for &(u, v, y) in examples {
            let s = self.logit(h, u, v);
            loss += s.max(0.0) + (-s.abs()).exp().ln_1p() - f64::from(y) * s;
            let ds = (nnkit::activation::sigmoid_scalar(s) - f64::from(y)) / n;
            for c in 0..d {
                dh2[u * d + c] += ds * h[v * d + c];
                dh2[v * d + c] += ds * h[u * d + c];
            }
        }
        let mut grad = vec![0.0; params.len()];
        let mut dh1 = self.layer_backward(params, g, &l2, &dh2, o.w2, o.b2, &mut grad);
        for (dv, y) in dh1.iter_mut().zip(&l1.out) {
            if *y <= 0.0 {
                *dv = 0.0;
            }
        }
        let demb = self.layer_backward(params, g, &l1, &dh1, o.w1, o.b1, &mut grad);
        for (gv, dv) in grad[o.emb..o.w1].iter_mut().zip(demb) {
            *gv += dv;
        }
        (loss / n, grad)
    }

    pub(crate) fn predict(&self, table: &FeatureTable, pairs: &[usize]) -> Result<Vec<Vec<f64>>> {
        if table.learners.len() != self.nodes {
            return Err(SlnError::InvalidArgument(format!(
                "graph model was trained on {} learners, table has {}",
                self.nodes,
                table.learners.len()
            )));
        }
        let embeddings: Vec<Vec<f64>> = prior_graphs(table).iter().map(|g| self.embed(g)).collect();
        Ok(pairs
            .iter()
            .map(|&p| {
                let s = &table.series[p];
                embeddings
                    .iter()
                    .map(|h| nnkit::activation::sigmoid_scalar(self.logit(h, s.u, s.v)))
                    .collect()
            })
            .collect())
    }
}

/// One Adam step per interval and epoch on that interval's positive training
/// pairs plus `negatives` sampled unformed training pairs per positive.
pub(crate) fn fit(spec: &ModelSpec, table: &FeatureTable, pairs: &[usize]) -> Result<(GnnModel, Vec<f64>)> {
    let hp = GnnParams::from_spec(spec);
    if hp.dim == 0 {
        return Err(SlnError::InvalidArgument("graph model dimension must be positive".into()));
    }
    let graphs = prior_graphs(table);
    let mut model = GnnModel::new(table.learners.len(), hp.dim, hp.seed);
    let mut adam = AdamState::with_lr(model.params.len(), hp.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed ^ NEGATIVE_SEED_SALT);
    let mut log = Vec::with_capacity(hp.epochs);
    for _ in 0..hp.epochs {
        let (mut total, mut steps) = (0.0, 0usize);
        for (t, g) in graphs.iter().enumerate() {
            let (pos, neg): (Vec<usize>, Vec<usize>) = pairs.iter().partition(|&&p| table.series[p].labels[t] == 1);
            if pos.is_empty() || neg.is_empty() {
                continue;
            }
            let mut examples: Vec<(usize, usize, u8)> = pos.iter().map(|&p| (table.series[p].u, table.series[p].v, 1)).collect();
            for _ in 0..pos.len() * hp.negatives {
                let s = &table.series[neg[rng.random_range(0..neg.len())]];
                examples.push((s.u, s.v, 0));
            }
            let (loss, grad) = model.loss_and_grad(g, &examples);
            adam.step(&mut model.params, &grad)?;
            total += loss;
            steps += 1;
        }
        log.push(total / steps.max(1) as f64);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut model = GnnModel::new(6, 4, 7);
        // shift embeddings so some first-layer units stay active
        for v in model.params.iter_mut().take(24) {
            *v += 0.3;
        }
        let g = Snapshot::from_edges(6, 1, [(0, 1), (1, 2), (2, 3), (0, 4)]);
        let examples = [(0, 1, 1), (2, 5, 0), (3, 4, 1), (1, 5, 0)];
        let (_, analytic) = model.loss_and_grad(&g, &examples);
        let check = nnkit::grad_check(&model.params, &analytic, None, nnkit::gradcheck::DEFAULT_STEP, |p| {
            model.loss_at(p, &g, &examples)
        });
        assert!(check.max_relative_error < 1e-5, "{check:?}");
    }

    #[test]
    fn isolated_nodes_aggregate_zero() {
        let model = GnnModel::new(3, 2, 1);
        let empty = Snapshot::empty(3, 0);
        let with_edge = Snapshot::from_edges(3, 1, [(0, 1)]);
        let a = model.embed(&empty);
        let b = model.embed(&with_edge);
        assert_eq!(a[4..6], b[4..6]);
    }
}
