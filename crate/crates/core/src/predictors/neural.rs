use nnkit::{AdamState, Architecture, Network, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelSpec, Sampling};
use crate::error::{Result, SlnError};
use crate::features::{select, FeatureTable, Standardizer};

const BATCH_SEED_SALT: u64 = 0x5851_f42d_4c95_7f2d;
const PREDICT_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnModel {
    pub architecture: Architecture,
    pub features: usize,
    pub params: Vec<f64>,
}

impl NnModel {
    pub fn network(&self) -> Result<Network> {
        Ok(Network::from_params(self.architecture.clone(), self.features, self.params.clone())?)
    }

    pub(crate) fn predict(&self, table: &FeatureTable, pairs: &[usize], columns: &[usize], std: &Standardizer) -> Result<Vec<Vec<f64>>> {
        let net = self.network()?;
        let steps = table.intervals;
        let mut out = Vec::with_capacity(pairs.len());
        if self.architecture.is_recurrent() {
            let per_chunk = (PREDICT_CHUNK / steps.max(1)).max(1);
            for chunk in pairs.chunks(per_chunk) {
                let x = sequences(table, chunk, columns, std)?;
                let p = net.predict(&x)?;
                out.extend(p.chunks(steps).map(<[f64]>::to_vec));
            }
        } else {
            let rows: Vec<(usize, usize)> = pairs.iter().flat_map(|&p| (0..steps).map(move |t| (p, t))).collect();
            let mut flat = Vec::with_capacity(rows.len());
            for chunk in rows.chunks(PREDICT_CHUNK) {
                flat.extend(net.predict(&static_rows(table, chunk, columns, std)?)?);
            }
            out.extend(flat.chunks(steps).map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}

fn standardized(table: &FeatureTable, pair: usize, t: usize, columns: &[usize], std: &Standardizer, out: &mut Vec<f64>) {
    std.apply(&select(&table.series[pair].vectors[t], columns), out);
}

fn static_rows(table: &FeatureTable, rows: &[(usize, usize)], columns: &[usize], std: &Standardizer) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * columns.len());
    for &(p, t) in rows {
        standardized(table, p, t, columns, std, &mut data);
    }
    Ok(Tensor::new(vec![rows.len(), columns.len()], data)?)
}

fn sequences(table: &FeatureTable, pairs: &[usize], columns: &[usize], std: &Standardizer) -> Result<Tensor> {
    let steps = table.intervals;
    let mut data = Vec::with_capacity(pairs.len() * steps * columns.len());
    for &p in pairs {
        for t in 0..steps {
            standardized(table, p, t, columns, std, &mut data);
        }
    }
    Ok(Tensor::new(vec![pairs.len(), steps, columns.len()], data)?)
}

/// One epoch's visiting order over example ids.
fn epoch_order<R: Rng>(positives: &[usize], negatives: &[usize], sampling: Sampling, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = match sampling {
        Sampling::Balanced => {
            let mut o = positives.to_vec();
            o.extend((0..positives.len()).map(|_| negatives[rng.random_range(0..negatives.len())]));
            o
        }
        Sampling::Proportional => positives.iter().chain(negatives).copied().collect(),
    };
    order.shuffle(rng);
    order
}

/// Trains a network with Adam on mini-batches, returning the epoch-mean loss log.
pub(crate) fn fit(spec: &ModelSpec, table: &FeatureTable, pairs: &[usize], columns: &[usize]) -> Result<(NnModel, Standardizer, Vec<f64>)> {
    let architecture = spec
        .architecture()
        .ok_or_else(|| SlnError::InvalidArgument(format!("{} is not a network model", spec.kind)))?;
    if spec.batch == 0 {
        return Err(SlnError::InvalidArgument("batch size must be positive".into()));
    }
    let recurrent = architecture.is_recurrent();
    let steps = table.intervals;
    let raw: Vec<Vec<f64>> = pairs
        .iter()
        .flat_map(|&p| table.series[p].vectors.iter().map(|v| select(v, columns)))
        .collect();
    let std = Standardizer::fit(raw.iter().map(Vec::as_slice), columns.len());
    drop(raw);

    let mut net = Network::new(architecture.clone(), columns.len(), spec.seed)?;
    let mut adam = AdamState::with_lr(net.params().len(), spec.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ BATCH_SEED_SALT);

    // Examples are pairs for sequence models and (pair, interval) rows otherwise.
    let examples: Vec<(usize, usize)> = if recurrent {
        pairs.iter().map(|&p| (p, 0)).collect()
    } else {
        pairs.iter().flat_map(|&p| (0..steps).map(move |t| (p, t))).collect()
    };
    let label = |&(p, t): &(usize, usize)| {
        let s = &table.series[p];
        if recurrent {
            s.final_label()
        } else {
            s.labels[t]
        }
    };
    let (positives, negatives): (Vec<usize>, Vec<usize>) = (0..examples.len()).partition(|&k| label(&examples[k]) == 1);
    if positives.is_empty() || negatives.is_empty() {
        return Err(SlnError::SingleClass);
    }

    let mut log = Vec::with_capacity(spec.epochs);
    for _ in 0..spec.epochs {
        let order = epoch_order(&positives, &negatives, spec.sampling, &mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for batch in order.chunks(spec.batch) {
            let chosen: Vec<(usize, usize)> = batch.iter().map(|&k| examples[k]).collect();
            let (x, y) = if recurrent {
                let ps: Vec<usize> = chosen.iter().map(|e| e.0).collect();
                let y: Vec<u8> = ps.iter().flat_map(|&p| table.series[p].labels.iter().copied()).collect();
                (sequences(table, &ps, columns, &std)?, y)
            } else {
                let y: Vec<u8> = chosen.iter().map(&label).collect();
                (static_rows(table, &chosen, columns, &std)?, y)
            };
            let (loss, grad) = net.loss_and_grad(&x, &y)?;
            adam.step(net.params_mut(), &grad)?;
            total += loss;
            batches += 1;
        }
        log.push(total / batches.max(1) as f64);
    }

    if let Some(layer) = net.bayes_layer() {
        // Latent noise variance from the mean-mode residuals on the training rows.
        let rows: Vec<(usize, usize)> = pairs.iter().flat_map(|&p| (0..steps).map(move |t| (p, t))).collect();
        let mut sq = 0.0;
        for chunk in rows.chunks(PREDICT_CHUNK) {
            let p = net.predict(&static_rows(table, chunk, columns, &std)?)?;
            for (&(pair, t), prob) in chunk.iter().zip(p) {
                sq += (f64::from(table.series[pair].labels[t]) - prob).powi(2);
            }
        }
        let sigma2 = (sq / rows.len().max(1) as f64).max(1e-6);
        layer.set_sigma2(net.params_mut(), sigma2)?;
    }

    let model = NnModel {
        architecture,
        features: columns.len(),
        params: net.into_params(),
    };
    Ok((model, std, log))
}
