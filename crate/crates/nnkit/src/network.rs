//! Fixed-topology networks: optional conv stack, optional LSTM, ReLU dense
//! stack and a two-class head (softmax or Bayesian-logistic).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::{sigmoid_scalar, softmax_rows_in_place};
use crate::error::{mismatch, NnError, Result};
use crate::gradcheck::{self, GradCheck};
use crate::layers::{BayesMode, BayesianLinear, Conv1d, Dense, LstmCell, LstmState, LstmStepCache};
use crate::loss::{cross_entropy, one_hot};
use crate::params::ParamLayout;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub maps: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    /// Gaussian latent layer with a logistic output, trained in mean mode.
    Bnet { latent: usize, l2: f64 },
    Fcnn { hidden: Vec<usize> },
    Cnn { convs: Vec<ConvSpec>, dense: usize },
    Rnn { cells: usize, dense: usize },
    Crnn { convs: Vec<ConvSpec>, cells: usize, dense: usize },
}

impl Architecture {
    pub fn bnet() -> Self {
        Self::Bnet { latent: 10, l2: 1e-4 }
    }

    pub fn fcnn() -> Self {
        Self::Fcnn { hidden: vec![128, 128] }
    }

    pub fn cnn() -> Self {
        Self::Cnn {
            convs: vec![ConvSpec { maps: 64, width: 3 }, ConvSpec { maps: 32, width: 2 }],
            dense: 32,
        }
    }

    pub fn rnn() -> Self {
        Self::Rnn { cells: 64, dense: 128 }
    }

    pub fn crnn() -> Self {
        Self::Crnn {
            convs: vec![ConvSpec { maps: 64, width: 3 }, ConvSpec { maps: 32, width: 2 }],
            cells: 32,
            dense: 32,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Bnet { .. } => "bnet",
            Self::Fcnn { .. } => "fcnn",
            Self::Cnn { .. } => "cnn",
            Self::Rnn { .. } => "rnn",
            Self::Crnn { .. } => "crnn",
        }
    }

    /// Recurrent architectures consume `[batch, steps, features]` inputs.
    pub fn is_recurrent(&self) -> bool {
        matches!(self, Self::Rnn { .. } | Self::Crnn { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Head {
    Softmax(Dense),
    Bayes(BayesianLinear),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    architecture: Architecture,
    features: usize,
    layout: ParamLayout,
    params: Vec<f64>,
    convs: Vec<Conv1d>,
    lstm: Option<LstmCell>,
    dense: Vec<Dense>,
    head: Head,
    l2: f64,
}

struct Cache {
    rows: usize,
    batch: usize,
    steps: usize,
    /// `acts[0]` is the input; each conv, the LSTM and each dense layer push their (post-ReLU) output.
    acts: Vec<Vec<f64>>,
    conv_cols: Vec<Vec<f64>>,
    conv_lengths: Vec<usize>,
    lstm_steps: Vec<LstmStepCache>,
    bayes_z: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn mask_relu(delta: &mut [f64], output: &[f64]) {
    for (d, y) in delta.iter_mut().zip(output) {
        if *y <= 0.0 {
            *d = 0.0;
        }
    }
}

impl Network {
    /// Builds the network for `features` input columns and initializes it from `seed`.
    pub fn new(architecture: Architecture, features: usize, seed: u64) -> Result<Self> {
        let mut net = Self::build(architecture, features)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.initialize(&mut rng);
        Ok(net)
    }

    /// Rebuilds a network around an existing parameter vector.
    pub fn from_params(architecture: Architecture, features: usize, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::build(architecture, features)?;
        if params.len() != net.params.len() {
            return Err(mismatch("Network::from_params", &[params.len()], &[net.params.len()]));
        }
        net.params = params;
        Ok(net)
    }

    fn build(architecture: Architecture, features: usize) -> Result<Self> {
        if features == 0 {
            return Err(NnError::InvalidParameter("network needs at least one feature".into()));
        }
        let mut layout = ParamLayout::new();
        let mut convs = Vec::new();
        let mut lstm = None;
        let mut dense = Vec::new();
        let (conv_specs, cells, hidden, l2): (&[ConvSpec], Option<usize>, Vec<usize>, f64) = match &architecture {
            Architecture::Bnet { l2, .. } => (&[], None, vec![], *l2),
            Architecture::Fcnn { hidden } => (&[], None, hidden.clone(), 0.0),
            Architecture::Cnn { convs, dense } => (convs, None, vec![*dense], 0.0),
            Architecture::Rnn { cells, dense } => (&[], Some(*cells), vec![*dense], 0.0),
            Architecture::Crnn { convs, cells, dense } => (convs, Some(*cells), vec![*dense], 0.0),
        };

        let (mut length, mut channels) = (features, 1);
        for (k, spec) in conv_specs.iter().enumerate() {
            if spec.maps == 0 || spec.width == 0 {
                return Err(NnError::InvalidParameter(format!("conv{} has zero maps or width", k + 1)));
            }
            let conv = Conv1d::register(&mut layout, &format!("conv{}", k + 1), channels, spec.maps, spec.width);
            length = conv.output_len(length).ok_or_else(|| {
                NnError::InvalidParameter(format!(
                    "conv{} width {} exceeds its input length {length}",
                    k + 1,
                    spec.width
                ))
            })?;
            channels = spec.maps;
            convs.push(conv);
        }
        let mut width = length * channels;
        if let Some(cells) = cells {
            let cell = LstmCell::register(&mut layout, "lstm", width, cells);
            width = cells;
            lstm = Some(cell);
        }
        for (k, &units) in hidden.iter().enumerate() {
            let layer = Dense::register(&mut layout, &format!("dense{}", k + 1), width, units);
            width = units;
            dense.push(layer);
        }
        let head = match &architecture {
            Architecture::Bnet { latent, .. } => Head::Bayes(BayesianLinear::register(&mut layout, "bayes", width, *latent)),
            _ => Head::Softmax(Dense::register(&mut layout, "head", width, 2)),
        };
        let params = vec![0.0; layout.len()];
        Ok(Self {
            architecture,
            features,
            layout,
            params,
            convs,
            lstm,
            dense,
            head,
            l2,
        })
    }

    fn initialize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let params = &mut self.params;
        for conv in &self.convs {
            conv.init(rng, params);
        }
        if let Some(cell) = &self.lstm {
            cell.init(rng, params);
        }
        for layer in &self.dense {
            layer.init(rng, params);
        }
        match &self.head {
            Head::Softmax(d) => d.init(rng, params),
            Head::Bayes(b) => b.init(rng, params),
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    pub fn bayes_layer(&self) -> Option<BayesianLinear> {
        match self.head {
            Head::Bayes(b) => Some(b),
            Head::Softmax(_) => None,
        }
    }

    pub fn lstm_cell(&self) -> Option<LstmCell> {
        self.lstm
    }

    /// Validates input shape, returning `(batch, steps)`.
    fn input_dims(&self, x: &Tensor) -> Result<(usize, usize)> {
        let recurrent = self.architecture.is_recurrent();
        let ok = if recurrent {
            x.rank() == 3 && x.shape()[2] == self.features
        } else {
            x.rank() == 2 && x.shape()[1] == self.features
        };
        if !ok {
            let expected: &[usize] = if recurrent { &[0, 0, self.features] } else { &[0, self.features] };
            return Err(mismatch("network_forward", x.shape(), expected));
        }
        Ok(if recurrent { (x.shape()[0], x.shape()[1]) } else { (x.shape()[0], 1) })
    }

    fn forward_cache(&self, params: &[f64], x: &Tensor) -> Result<Cache> {
        let (batch, steps) = self.input_dims(x)?;
        let rows = batch * steps;
        let mut cache = Cache {
            rows,
            batch,
            steps,
            acts: vec![x.data().to_vec()],
            conv_cols: Vec::new(),
            conv_lengths: Vec::new(),
            lstm_steps: Vec::new(),
            bayes_z: Vec::new(),
            logits: Vec::new(),
            probs: Vec::new(),
        };

        // Convolutions run per row (per time step for recurrent models) over the feature axis.
        let mut length = self.features;
        for conv in &self.convs {
            let input = cache.acts.last().expect("input present");
            let (mut y, cols) = conv.forward_raw(params, input, rows, length);
            relu_in_place(&mut y);
            cache.conv_cols.push(cols);
            cache.conv_lengths.push(length);
            length = length + 1 - conv.width;
            cache.acts.push(y);
        }

        if let Some(cell) = &self.lstm {
            let input = cache.acts.last().expect("input present");
            let (n_in, n_h) = (cell.input, cell.hidden);
            let mut h = vec![0.0; batch * n_h];
            let mut z = vec![0.0; batch * n_h];
            let mut h_all = vec![0.0; rows * n_h];
            let mut x_t = vec![0.0; batch * n_in];
            for t in 0..steps {
                for b in 0..batch {
                    let r = b * steps + t;
                    x_t[b * n_in..(b + 1) * n_in].copy_from_slice(&input[r * n_in..(r + 1) * n_in]);
                }
                let step = cell.step_raw(params, &x_t, &h, &z, batch);
                h.copy_from_slice(&step.state.h);
                z.copy_from_slice(&step.state.z);
                for b in 0..batch {
                    let r = b * steps + t;
                    h_all[r * n_h..(r + 1) * n_h].copy_from_slice(&h[b * n_h..(b + 1) * n_h]);
                }
                cache.lstm_steps.push(step);
            }
            cache.acts.push(h_all);
        }

        for layer in &self.dense {
            let input = cache.acts.last().expect("input present");
            let mut y = vec![0.0; rows * layer.output];
            layer.forward_raw(params, input, rows, &mut y);
            relu_in_place(&mut y);
            cache.acts.push(y);
        }

        let input = cache.acts.last().expect("input present");
        match &self.head {
            Head::Softmax(d) => {
                let mut logits = vec![0.0; rows * 2];
                d.forward_raw(params, input, rows, &mut logits);
                let mut probs = logits.clone();
                softmax_rows_in_place(&mut probs, 2);
                cache.logits = logits;
                cache.probs = probs;
            }
            Head::Bayes(b) => {
                let (z, logits) = b.forward_mean_raw(params, input, rows);
                // softmax over [0, a] is [σ(-a), σ(a)]
                cache.probs = logits.iter().flat_map(|&a| [sigmoid_scalar(-a), sigmoid_scalar(a)]).collect();
                cache.bayes_z = z;
                cache.logits = logits;
            }
        }
        debug_assert!(!x.all_finite() || cache.probs.iter().all(|p| p.is_finite()));
        Ok(cache)
    }

    fn check_labels(&self, cache: &Cache, labels: &[u8]) -> Result<()> {
        if labels.len() != cache.rows {
            return Err(mismatch("network_labels", &[labels.len()], &[cache.rows]));
        }
        Ok(())
    }

    fn l2_penalty(&self, params: &[f64]) -> f64 {
        match (&self.head, self.l2 > 0.0) {
            (Head::Bayes(b), true) => 0.5 * self.l2 * params[b.weight_range()].iter().map(|v| v * v).sum::<f64>(),
            _ => 0.0,
        }
    }

    fn loss_from_cache(&self, params: &[f64], cache: &Cache, labels: &[u8]) -> Result<f64> {
        let probs = Tensor::new(vec![cache.rows, 2], cache.probs.clone())?;
        Ok(cross_entropy(&probs, &one_hot(labels))? + self.l2_penalty(params))
    }

    /// Class probabilities `[rows, 2]`; rows are ordered `b * steps + t` for sequences.
    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        let cache = self.forward_cache(&self.params, x)?;
        Tensor::new(vec![cache.rows, 2], cache.probs)
    }

    /// `P(y = 1)` per row.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        let cache = self.forward_cache(&self.params, x)?;
        Ok(cache.probs.chunks(2).map(|p| p[1]).collect())
    }

    /// Bayesian head only: `P(y = 1)` per row with latent noise drawn from `rng`.
    pub fn predict_sampled<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<Vec<f64>> {
        let layer = self.bayes_layer().ok_or_else(|| NnError::InvalidParameter("network has no Bayesian head".into()))?;
        let (batch, _) = self.input_dims(x)?;
        (0..batch)
            .map(|r| layer.forward(&self.params, x.row(r), BayesMode::Sample, rng))
            .collect()
    }

    pub fn loss(&self, x: &Tensor, labels: &[u8]) -> Result<f64> {
        self.loss_at(&self.params, x, labels)
    }

    fn loss_at(&self, params: &[f64], x: &Tensor, labels: &[u8]) -> Result<f64> {
        let cache = self.forward_cache(params, x)?;
        self.check_labels(&cache, labels)?;
        self.loss_from_cache(params, &cache, labels)
    }

    /// Mean cross entropy (plus the Bayesian L2 term) and its gradient over all parameters.
    pub fn loss_and_grad(&self, x: &Tensor, labels: &[u8]) -> Result<(f64, Vec<f64>)> {
        let params = &self.params;
        let cache = self.forward_cache(params, x)?;
        self.check_labels(&cache, labels)?;
        let loss = self.loss_from_cache(params, &cache, labels)?;
        let mut grad = vec![0.0; params.len()];
        let rows = cache.rows;
        let n = rows.max(1) as f64;
        let mut level = cache.acts.len() - 1;
        let has_lower = level > 0;

        let mut delta = match &self.head {
            Head::Softmax(d) => {
                let dlogits: Vec<f64> = cache
                    .probs
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        let y = if (labels[k / 2] != 0) == (k % 2 == 1) { 1.0 } else { 0.0 };
                        (p - y) / n
                    })
                    .collect();
                let mut dx = vec![0.0; if has_lower { rows * d.input } else { 0 }];
                d.backward_raw(params, &cache.acts[level], &dlogits, rows, &mut grad, has_lower.then_some(&mut dx[..]));
                dx
            }
            Head::Bayes(b) => {
                let dlogit: Vec<f64> = (0..rows).map(|r| (cache.probs[2 * r + 1] - f64::from(labels[r].min(1))) / n).collect();
                b.backward_mean_raw(params, &cache.acts[level], &cache.bayes_z, &dlogit, rows, &mut grad);
                for k in b.weight_range() {
                    grad[k] += self.l2 * params[k];
                }
                Vec::new()
            }
        };

        for layer in self.dense.iter().rev() {
            mask_relu(&mut delta, &cache.acts[level]);
            level -= 1;
            let lower = level > 0;
            let mut dx = vec![0.0; if lower { rows * layer.input } else { 0 }];
            layer.backward_raw(params, &cache.acts[level], &delta, rows, &mut grad, lower.then_some(&mut dx[..]));
            delta = dx;
        }

        if let Some(cell) = &self.lstm {
            level -= 1;
            let lower = level > 0;
            let (batch, steps) = (cache.batch, cache.steps);
            let (n_in, n_h) = (cell.input, cell.hidden);
            let mut dx_all = vec![0.0; if lower { rows * n_in } else { 0 }];
            let mut dh_next = vec![0.0; batch * n_h];
            let mut dz_next = vec![0.0; batch * n_h];
            let zeros = vec![0.0; batch * n_h];
            let mut dh = vec![0.0; batch * n_h];
            for t in (0..steps).rev() {
                for b in 0..batch {
                    let r = b * steps + t;
                    for k in 0..n_h {
                        dh[b * n_h + k] = delta[r * n_h + k] + dh_next[b * n_h + k];
                    }
                }
                let z_prev = if t == 0 { &zeros } else { &cache.lstm_steps[t - 1].state.z };
                let (dx, dh_prev, dz_prev) =
                    cell.step_backward_raw(params, &cache.lstm_steps[t], z_prev, &dh, &dz_next, batch, &mut grad, lower);
                if lower {
                    for b in 0..batch {
                        let r = b * steps + t;
                        dx_all[r * n_in..(r + 1) * n_in].copy_from_slice(&dx[b * n_in..(b + 1) * n_in]);
                    }
                }
                dh_next = dh_prev;
                dz_next = dz_prev;
            }
            delta = dx_all;
        }

        for (k, conv) in self.convs.iter().enumerate().rev() {
            mask_relu(&mut delta, &cache.acts[level]);
            level -= 1;
            let lower = k > 0;
            let length = cache.conv_lengths[k];
            let mut dx = vec![0.0; if lower { rows * length * conv.in_channels } else { 0 }];
            conv.backward_raw(params, &cache.conv_cols[k], &delta, rows, length, &mut grad, lower.then_some(&mut dx[..]));
            delta = dx;
        }
        Ok((loss, grad))
    }

    /// Finite-difference check of [`Network::loss_and_grad`] over `indices` (all when `None`).
    pub fn grad_check(&self, x: &Tensor, labels: &[u8], indices: Option<&[usize]>) -> Result<GradCheck> {
        let (_, analytic) = self.loss_and_grad(x, labels)?;
        // Non-trainable blocks get no analytic gradient; perturbing them is meaningless.
        let trainable: Vec<usize>;
        let indices = match indices {
            Some(ix) => ix,
            None => {
                trainable = self
                    .layout
                    .blocks()
                    .iter()
                    .filter(|b| b.trainable)
                    .flat_map(|b| b.range())
                    .collect();
                &trainable
            }
        };
        Ok(gradcheck::grad_check(&self.params, &analytic, Some(indices), gradcheck::DEFAULT_STEP, |p| {
            self.loss_at(p, x, labels).expect("shapes validated above")
        }))
    }

    /// Gate activations for one sequence `[steps, features]`, one entry per step.
    pub fn lstm_trace(&self, sequence: &Tensor) -> Result<Vec<LstmState>> {
        if self.lstm.is_none() {
            return Err(NnError::NoRecurrentLayer);
        }
        sequence.expect_rank("lstm_trace", 2)?;
        let x = sequence.clone().reshape(vec![1, sequence.shape()[0], sequence.shape()[1]])?;
        let cache = self.forward_cache(&self.params, &x)?;
        Ok(cache.lstm_steps.into_iter().map(|s| s.state).collect())
    }
}
