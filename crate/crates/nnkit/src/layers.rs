//! Layer kernels over a shared flat parameter vector.
//!
//! Each layer records the offsets of its blocks inside the owning network's
//! parameter vector; forward passes read from that vector and backward passes
//! accumulate into a gradient vector with the same layout.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activation::sigmoid_scalar;
use crate::error::{mismatch, NnError, Result};
use crate::gemm;
use crate::init::glorot_uniform;
use crate::params::ParamLayout;
use crate::tensor::Tensor;

/// Fully connected layer `y = W x + b`, `W: [output, input]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    weight_offset: usize,
    bias_offset: usize,
}

impl Dense {
    pub fn register(layout: &mut ParamLayout, name: &str, input: usize, output: usize) -> Self {
        let weight_offset = layout.push(format!("{name}.weight"), vec![output, input], true);
        let bias_offset = layout.push(format!("{name}.bias"), vec![output], true);
        Self {
            input,
            output,
            weight_offset,
            bias_offset,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut [f64]) {
        glorot_uniform(rng, self.input, self.output, &mut params[self.weight_range()]);
        params[self.bias_range()].fill(0.0);
    }

    fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.input * self.output
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.output
    }

    pub fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.weight_range()]
    }

    pub fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.bias_range()]
    }

    pub(crate) fn forward_raw(&self, params: &[f64], x: &[f64], batch: usize, y: &mut [f64]) {
        let bias = self.bias(params);
        for row in y[..batch * self.output].chunks_mut(self.output) {
            row.copy_from_slice(bias);
        }
        gemm::a_bt(batch, self.input, self.output, x, self.weights(params), 1.0, y);
    }

    /// Accumulates parameter gradients; writes the input gradient when `dx` is given.
    pub(crate) fn backward_raw(
        &self,
        params: &[f64],
        x: &[f64],
        dy: &[f64],
        batch: usize,
        grad: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        gemm::at_b(self.output, batch, self.input, dy, x, 1.0, &mut grad[self.weight_range()]);
        let gb = &mut grad[self.bias_range()];
        for row in dy[..batch * self.output].chunks(self.output) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if let Some(dx) = dx {
            gemm::a_b(batch, self.output, self.input, dy, self.weights(params), 0.0, dx);
        }
    }

    /// `x: [batch, input]` to `[batch, output]`.
    pub fn forward(&self, params: &[f64], x: &Tensor) -> Result<Tensor> {
        x.expect_rank("dense_forward", 2)?;
        if x.shape()[1] != self.input {
            return Err(mismatch("dense_forward", x.shape(), &[self.output, self.input]));
        }
        let batch = x.shape()[0];
        let mut y = vec![0.0; batch * self.output];
        self.forward_raw(params, x.data(), batch, &mut y);
        Tensor::new(vec![batch, self.output], y)
    }

    /// Returns the input gradient and accumulates weight/bias gradients into `grad`.
    pub fn backward(&self, params: &[f64], x: &Tensor, dy: &Tensor, grad: &mut [f64]) -> Result<Tensor> {
        x.expect_rank("dense_backward", 2)?;
        let batch = x.shape()[0];
        if x.shape()[1] != self.input {
            return Err(mismatch("dense_backward", x.shape(), &[self.output, self.input]));
        }
        if dy.shape() != [batch, self.output] {
            return Err(mismatch("dense_backward", dy.shape(), &[batch, self.output]));
        }
        let mut dx = vec![0.0; batch * self.input];
        self.backward_raw(params, x.data(), dy.data(), batch, grad, Some(&mut dx));
        Tensor::new(vec![batch, self.input], dx)
    }
}

/// Valid (unpadded, stride 1) 1-D convolution over a channels-last signal.
///
/// Input `[batch, length, in_channels]`, output `[batch, length - width + 1, maps]`.
/// Kernels are stored as `[maps, width, in_channels]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv1d {
    pub in_channels: usize,
    pub maps: usize,
    pub width: usize,
    kernel_offset: usize,
    bias_offset: usize,
}

impl Conv1d {
    pub fn register(layout: &mut ParamLayout, name: &str, in_channels: usize, maps: usize, width: usize) -> Self {
        let kernel_offset = layout.push(format!("{name}.kernel"), vec![maps, width, in_channels], true);
        let bias_offset = layout.push(format!("{name}.bias"), vec![maps], true);
        Self {
            in_channels,
            maps,
            width,
            kernel_offset,
            bias_offset,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut [f64]) {
        glorot_uniform(
            rng,
            self.in_channels * self.width,
            self.maps * self.width,
            &mut params[self.kernel_range()],
        );
        params[self.bias_range()].fill(0.0);
    }

    fn patch(&self) -> usize {
        self.width * self.in_channels
    }

    fn kernel_range(&self) -> std::ops::Range<usize> {
        self.kernel_offset..self.kernel_offset + self.maps * self.patch()
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.maps
    }

    pub fn kernels<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.kernel_range()]
    }

    pub fn output_len(&self, length: usize) -> Option<usize> {
        (length >= self.width).then(|| length - self.width + 1)
    }

    fn im2col(&self, x: &[f64], batch: usize, length: usize, out_len: usize) -> Vec<f64> {
        let patch = self.patch();
        let stride = length * self.in_channels;
        let mut cols = Vec::with_capacity(batch * out_len * patch);
        for b in 0..batch {
            let signal = &x[b * stride..(b + 1) * stride];
            for p in 0..out_len {
                // channels-last: the window is one contiguous run
                let start = p * self.in_channels;
                cols.extend_from_slice(&signal[start..start + patch]);
            }
        }
        cols
    }

    /// Returns the output and the im2col buffer used by the backward pass.
    pub(crate) fn forward_raw(&self, params: &[f64], x: &[f64], batch: usize, length: usize) -> (Vec<f64>, Vec<f64>) {
        let out_len = length + 1 - self.width;
        let cols = self.im2col(x, batch, length, out_len);
        let rows = batch * out_len;
        let mut y = Vec::with_capacity(rows * self.maps);
        let bias = &params[self.bias_range()];
        for _ in 0..rows {
            y.extend_from_slice(bias);
        }
        gemm::a_bt(rows, self.patch(), self.maps, &cols, self.kernels(params), 1.0, &mut y);
        (y, cols)
    }

    pub(crate) fn backward_raw(
        &self,
        params: &[f64],
        cols: &[f64],
        dy: &[f64],
        batch: usize,
        length: usize,
        grad: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        let out_len = length + 1 - self.width;
        let rows = batch * out_len;
        let patch = self.patch();
        gemm::at_b(self.maps, rows, patch, dy, cols, 1.0, &mut grad[self.kernel_range()]);
        let gb = &mut grad[self.bias_range()];
        for row in dy[..rows * self.maps].chunks(self.maps) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if let Some(dx) = dx {
            let mut dcols = vec![0.0; rows * patch];
            gemm::a_b(rows, self.maps, patch, dy, self.kernels(params), 0.0, &mut dcols);
            dx[..batch * length * self.in_channels].fill(0.0);
            let stride = length * self.in_channels;
            for b in 0..batch {
                let signal = &mut dx[b * stride..(b + 1) * stride];
                for p in 0..out_len {
                    let src = &dcols[(b * out_len + p) * patch..(b * out_len + p + 1) * patch];
                    let start = p * self.in_channels;
                    for (d, s) in signal[start..start + patch].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }

    fn check_input(&self, op: &'static str, x: &Tensor) -> Result<(usize, usize, usize)> {
        x.expect_rank(op, 3)?;
        let (batch, length, channels) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if channels != self.in_channels || length < self.width {
            return Err(mismatch(op, x.shape(), &[self.maps, self.width, self.in_channels]));
        }
        Ok((batch, length, length + 1 - self.width))
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> Result<Tensor> {
        let (batch, length, out_len) = self.check_input("conv1d_forward", x)?;
        let (y, _) = self.forward_raw(params, x.data(), batch, length);
        Tensor::new(vec![batch, out_len, self.maps], y)
    }

    pub fn backward(&self, params: &[f64], x: &Tensor, dy: &Tensor, grad: &mut [f64]) -> Result<Tensor> {
        let (batch, length, out_len) = self.check_input("conv1d_backward", x)?;
        if dy.shape() != [batch, out_len, self.maps] {
            return Err(mismatch("conv1d_backward", dy.shape(), &[batch, out_len, self.maps]));
        }
        let cols = self.im2col(x.data(), batch, length, out_len);
        let mut dx = vec![0.0; x.len()];
        self.backward_raw(params, &cols, dy.data(), batch, length, grad, Some(&mut dx));
        Tensor::new(x.shape().to_vec(), dx)
    }
}

/// Activations of one LSTM step for a batch, each `[batch, hidden]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    /// Interaction gate (tanh).
    pub g: Vec<f64>,
    /// Relationship gain gate.
    pub i: Vec<f64>,
    /// Relationship fading gate.
    pub f: Vec<f64>,
    /// Output gate.
    pub o: Vec<f64>,
    /// Cell state.
    pub z: Vec<f64>,
    /// Output `sigmoid(z * o)`.
    pub h: Vec<f64>,
}

pub(crate) struct LstmStepCache {
    /// `[x, h_prev]` rows, `[batch, input + hidden]`.
    pub d: Vec<f64>,
    pub state: LstmState,
}

/// LSTM cell over `d = [x, h_prev]`:
/// `g = tanh(W_g d + b_g)`, `i = σ(W_i d + b_i)`, `f = σ(W_f d + b_f)`,
/// `z = g ⊙ i + z_prev ⊙ f`, `o = σ(W_o d + b_o)`, `h = σ(z ⊙ o)`.
///
/// The four gate matrices (`[hidden, input + hidden]` each) are stored back to
/// back in the order g, i, f, o so one product computes all pre-activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    weight_offset: usize,
    bias_offset: usize,
}

const GATES: [&str; 4] = ["g", "i", "f", "o"];

impl LstmCell {
    pub fn register(layout: &mut ParamLayout, name: &str, input: usize, hidden: usize) -> Self {
        let width = input + hidden;
        let weight_offset = layout.push(format!("{name}.W_{}", GATES[0]), vec![hidden, width], true);
        for gate in &GATES[1..] {
            layout.push(format!("{name}.W_{gate}"), vec![hidden, width], true);
        }
        let bias_offset = layout.push(format!("{name}.b_{}", GATES[0]), vec![hidden], true);
        for gate in &GATES[1..] {
            layout.push(format!("{name}.b_{gate}"), vec![hidden], true);
        }
        Self {
            input,
            hidden,
            weight_offset,
            bias_offset,
        }
    }

    /// Glorot weights, zero biases except the fading gate which starts at +1.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut [f64]) {
        let width = self.input + self.hidden;
        let block = self.hidden * width;
        for gate in 0..4 {
            let start = self.weight_offset + gate * block;
            glorot_uniform(rng, width, self.hidden, &mut params[start..start + block]);
        }
        let biases = &mut params[self.bias_range()];
        biases.fill(0.0);
        biases[2 * self.hidden..3 * self.hidden].fill(1.0);
    }

    fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + 4 * self.hidden * (self.input + self.hidden)
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + 4 * self.hidden
    }

    /// Mutable view of one gate bias (`"g"`, `"i"`, `"f"` or `"o"`).
    pub fn gate_bias_mut<'a>(&self, params: &'a mut [f64], gate: &str) -> Option<&'a mut [f64]> {
        let idx = GATES.iter().position(|g| *g == gate)?;
        let start = self.bias_offset + idx * self.hidden;
        Some(&mut params[start..start + self.hidden])
    }

    pub(crate) fn step_raw(&self, params: &[f64], x: &[f64], h_prev: &[f64], z_prev: &[f64], batch: usize) -> LstmStepCache {
        let (n_in, n_h) = (self.input, self.hidden);
        let width = n_in + n_h;
        let mut d = Vec::with_capacity(batch * width);
        for b in 0..batch {
            d.extend_from_slice(&x[b * n_in..(b + 1) * n_in]);
            d.extend_from_slice(&h_prev[b * n_h..(b + 1) * n_h]);
        }
        let bias = &params[self.bias_range()];
        let mut pre = Vec::with_capacity(batch * 4 * n_h);
        for _ in 0..batch {
            pre.extend_from_slice(bias);
        }
        gemm::a_bt(batch, width, 4 * n_h, &d, &params[self.weight_range()], 1.0, &mut pre);

        let size = batch * n_h;
        let mut state = LstmState {
            g: vec![0.0; size],
            i: vec![0.0; size],
            f: vec![0.0; size],
            o: vec![0.0; size],
            z: vec![0.0; size],
            h: vec![0.0; size],
        };
        for b in 0..batch {
            let row = &pre[b * 4 * n_h..(b + 1) * 4 * n_h];
            for k in 0..n_h {
                let idx = b * n_h + k;
                let g = row[k].tanh();
                let i = sigmoid_scalar(row[n_h + k]);
                let f = sigmoid_scalar(row[2 * n_h + k]);
                let o = sigmoid_scalar(row[3 * n_h + k]);
                let z = g * i + z_prev[idx] * f;
                state.g[idx] = g;
                state.i[idx] = i;
                state.f[idx] = f;
                state.o[idx] = o;
                state.z[idx] = z;
                state.h[idx] = sigmoid_scalar(z * o);
            }
        }
        LstmStepCache { d, state }
    }

    /// Backpropagates one step. `dh` is the total gradient on this step's output,
    /// `dz` the gradient flowing into this step's cell state from the next step.
    /// Returns `(dx, dh_prev, dz_prev)`.
    pub(crate) fn step_backward_raw(
        &self,
        params: &[f64],
        cache: &LstmStepCache,
        z_prev: &[f64],
        dh: &[f64],
        dz: &[f64],
        batch: usize,
        grad: &mut [f64],
        need_dx: bool,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n_in, n_h) = (self.input, self.hidden);
        let width = n_in + n_h;
        let s = &cache.state;
        let mut dpre = vec![0.0; batch * 4 * n_h];
        let mut dz_prev = vec![0.0; batch * n_h];
        for b in 0..batch {
            let row = &mut dpre[b * 4 * n_h..(b + 1) * 4 * n_h];
            for k in 0..n_h {
                let idx = b * n_h + k;
                let (g, i, f, o, z, h) = (s.g[idx], s.i[idx], s.f[idx], s.o[idx], s.z[idx], s.h[idx]);
                let dq = dh[idx] * h * (1.0 - h);
                let d_o = dq * z;
                let dz_total = dq * o + dz[idx];
                let dg = dz_total * i;
                let di = dz_total * g;
                let df = dz_total * z_prev[idx];
                dz_prev[idx] = dz_total * f;
                row[k] = dg * (1.0 - g * g);
                row[n_h + k] = di * i * (1.0 - i);
                row[2 * n_h + k] = df * f * (1.0 - f);
                row[3 * n_h + k] = d_o * o * (1.0 - o);
            }
        }
        gemm::at_b(4 * n_h, batch, width, &dpre, &cache.d, 1.0, &mut grad[self.weight_range()]);
        let gb = &mut grad[self.bias_range()];
        for row in dpre.chunks(4 * n_h) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dd = vec![0.0; batch * width];
        gemm::a_b(batch, 4 * n_h, width, &dpre, &params[self.weight_range()], 0.0, &mut dd);
        let mut dx = if need_dx { vec![0.0; batch * n_in] } else { Vec::new() };
        let mut dh_prev = vec![0.0; batch * n_h];
        for b in 0..batch {
            let row = &dd[b * width..(b + 1) * width];
            if need_dx {
                dx[b * n_in..(b + 1) * n_in].copy_from_slice(&row[..n_in]);
            }
            dh_prev[b * n_h..(b + 1) * n_h].copy_from_slice(&row[n_in..]);
        }
        (dx, dh_prev, dz_prev)
    }

    /// One step for a single sequence: returns all gate activations, with
    /// `state.h` and `state.z` being the new output and cell state.
    pub fn step(&self, params: &[f64], x: &[f64], h_prev: &[f64], z_prev: &[f64]) -> Result<LstmState> {
        if x.len() != self.input {
            return Err(mismatch("lstm_step", &[x.len()], &[self.input]));
        }
        if h_prev.len() != self.hidden || z_prev.len() != self.hidden {
            return Err(mismatch("lstm_step", &[h_prev.len(), z_prev.len()], &[self.hidden, self.hidden]));
        }
        Ok(self.step_raw(params, x, h_prev, z_prev, 1).state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BayesMode {
    /// `z = W e` deterministically.
    Mean,
    /// `z ~ Normal(W e, σ²)` per latent unit.
    Sample,
}

/// Gaussian latent layer followed by a logistic output:
/// `z ~ N(W e, σ²)`, `P(y = 1 | z) = σ(φᵀ z + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BayesianLinear {
    pub input: usize,
    pub latent: usize,
    weight_offset: usize,
    sigma2_offset: usize,
    phi_offset: usize,
    bias_offset: usize,
}

impl BayesianLinear {
    pub fn register(layout: &mut ParamLayout, name: &str, input: usize, latent: usize) -> Self {
        let weight_offset = layout.push(format!("{name}.w"), vec![latent, input], true);
        let sigma2_offset = layout.push(format!("{name}.sigma2"), vec![1], false);
        let phi_offset = layout.push(format!("{name}.phi"), vec![latent], true);
        let bias_offset = layout.push(format!("{name}.b"), vec![1], true);
        Self {
            input,
            latent,
            weight_offset,
            sigma2_offset,
            phi_offset,
            bias_offset,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut [f64]) {
        glorot_uniform(rng, self.input, self.latent, &mut params[self.weight_range()]);
        glorot_uniform(rng, self.latent, 1, &mut params[self.phi_range()]);
        params[self.sigma2_offset] = 1.0;
        params[self.bias_offset] = 0.0;
    }

    pub(crate) fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.latent * self.input
    }

    fn phi_range(&self) -> std::ops::Range<usize> {
        self.phi_offset..self.phi_offset + self.latent
    }

    pub fn sigma2(&self, params: &[f64]) -> f64 {
        params[self.sigma2_offset]
    }

    pub fn set_sigma2(&self, params: &mut [f64], sigma2: f64) -> Result<()> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(NnError::InvalidParameter(format!("sigma2 must be positive, got {sigma2}")));
        }
        params[self.sigma2_offset] = sigma2;
        Ok(())
    }

    pub fn weights_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        &mut params[self.weight_range()]
    }

    pub fn phi_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        &mut params[self.phi_range()]
    }

    pub fn set_bias(&self, params: &mut [f64], b: f64) {
        params[self.bias_offset] = b;
    }

    /// Mean-mode latent activations `[batch, latent]` and output logits `[batch]`.
    pub(crate) fn forward_mean_raw(&self, params: &[f64], x: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        let mut z = vec![0.0; batch * self.latent];
        gemm::a_bt(batch, self.input, self.latent, x, &params[self.weight_range()], 0.0, &mut z);
        let phi = &params[self.phi_range()];
        let b = params[self.bias_offset];
        let logits = z
            .chunks(self.latent)
            .map(|row| row.iter().zip(phi).map(|(a, p)| a * p).sum::<f64>() + b)
            .collect();
        (z, logits)
    }

    /// `dlogit` is the loss gradient on each row's logit.
    pub(crate) fn backward_mean_raw(&self, params: &[f64], x: &[f64], z: &[f64], dlogit: &[f64], batch: usize, grad: &mut [f64]) {
        let phi = params[self.phi_range()].to_vec();
        let mut dz = vec![0.0; batch * self.latent];
        for b in 0..batch {
            let d = dlogit[b];
            grad[self.bias_offset] += d;
            for k in 0..self.latent {
                grad[self.phi_offset + k] += d * z[b * self.latent + k];
                dz[b * self.latent + k] = d * phi[k];
            }
        }
        gemm::at_b(self.latent, batch, self.input, &dz, x, 1.0, &mut grad[self.weight_range()]);
    }

    /// Link probability for a single feature vector.
    pub fn forward<R: Rng + ?Sized>(&self, params: &[f64], e: &[f64], mode: BayesMode, rng: &mut R) -> Result<f64> {
        if e.len() != self.input {
            return Err(mismatch("bayes_forward", &[e.len()], &[self.input]));
        }
        let sigma2 = self.sigma2(params);
        if !(sigma2 > 0.0) {
            return Err(NnError::InvalidParameter(format!("sigma2 must be positive, got {sigma2}")));
        }
        let (mut z, _) = self.forward_mean_raw(params, e, 1);
        if mode == BayesMode::Sample {
            let sd = sigma2.sqrt();
            for v in z.iter_mut() {
                let eps: f64 = StandardNormal.sample(rng);
                *v += sd * eps;
            }
        }
        let phi = &params[self.phi_range()];
        let logit = z.iter().zip(phi).map(|(a, p)| a * p).sum::<f64>() + params[self.bias_offset];
        Ok(sigmoid_scalar(logit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_matches_hand_arithmetic_and_checks_shapes() {
        let mut layout = ParamLayout::new();
        let d = Dense::register(&mut layout, "d", 2, 1);
        let params = vec![2.0, -1.0, 0.5];
        let y = d.forward(&params, &Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[2.5]);
        let err = d.forward(&params, &Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap()).unwrap_err();
        assert!(err.to_string().contains("[1, 3]") && err.to_string().contains("[1, 2]"));
    }

    #[test]
    fn conv_matches_sliding_dot_product() {
        let mut layout = ParamLayout::new();
        let conv = Conv1d::register(&mut layout, "c", 1, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = vec![0.0; layout.len()];
        conv.init(&mut rng, &mut params);
        params[6] = 0.25;
        params[7] = -0.5;
        let signal = [0.3, -1.2, 2.0, 0.7, 0.0, -0.4, 1.1];
        let x = Tensor::new(vec![1, 7, 1], signal.to_vec()).unwrap();
        let y = conv.forward(&params, &x).unwrap();
        assert_eq!(y.shape(), &[1, 5, 2]);
        for p in 0..5 {
            for m in 0..2 {
                let kernel = &params[m * 3..m * 3 + 3];
                let want: f64 = (0..3).map(|k| kernel[k] * signal[p + k]).sum::<f64>() + params[6 + m];
                assert!((y.data()[p * 2 + m] - want).abs() < 1e-14);
            }
        }
        let short = Tensor::new(vec![1, 2, 1], vec![0.0, 0.0]).unwrap();
        assert!(conv.forward(&params, &short).is_err());
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut layout = ParamLayout::new();
        let conv = Conv1d::register(&mut layout, "c", 2, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = vec![0.0; layout.len()];
        conv.init(&mut rng, &mut params);
        let x = Tensor::new(vec![2, 4, 2], (0..16).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
        let dy = Tensor::new(vec![2, 3, 3], (0..18).map(|v| (v as f64 * 0.11).cos()).collect()).unwrap();
        let mut grad = vec![0.0; params.len()];
        let dx = conv.backward(&params, &x, &dy, &mut grad).unwrap();
        let objective = |p: &[f64], x: &Tensor| -> f64 {
            conv.forward(p, x).unwrap().data().iter().zip(dy.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for k in 0..params.len() {
            let mut plus = params.clone();
            plus[k] += h;
            let mut minus = params.clone();
            minus[k] -= h;
            let numeric = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * h);
            assert!((numeric - grad[k]).abs() < 1e-8, "param {k}");
        }
        for k in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[k] += h;
            let mut minus = x.clone();
            minus.data_mut()[k] -= h;
            let numeric = (objective(&params, &plus) - objective(&params, &minus)) / (2.0 * h);
            assert!((numeric - dx.data()[k]).abs() < 1e-8, "input {k}");
        }
    }

    #[test]
    fn zero_lstm_has_closed_form_gates() {
        let mut layout = ParamLayout::new();
        let cell = LstmCell::register(&mut layout, "lstm", 3, 4);
        let params = vec![0.0; layout.len()];
        let s = cell.step(&params, &[0.0; 3], &[0.0; 4], &[0.0; 4]).unwrap();
        assert!(s.g.iter().all(|&v| v == 0.0));
        assert!(s.i.iter().chain(&s.f).chain(&s.o).all(|&v| v == 0.5));
        assert!(s.z.iter().all(|&v| v == 0.0));
        assert!(s.h.iter().all(|&v| v == 0.5));
        assert!(cell.step(&params, &[0.0; 2], &[0.0; 4], &[0.0; 4]).is_err());
    }

    #[test]
    fn saturated_gates_carry_state_exactly() {
        let mut layout = ParamLayout::new();
        let cell = LstmCell::register(&mut layout, "lstm", 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = vec![0.0; layout.len()];
        cell.init(&mut rng, &mut params);
        cell.gate_bias_mut(&mut params, "f").unwrap().fill(1e3);
        cell.gate_bias_mut(&mut params, "i").unwrap().fill(-1e3);
        let z0 = vec![0.3, -0.7, 1.9];
        let mut h = vec![0.1, 0.2, 0.3];
        let mut z = z0.clone();
        for t in 0..200 {
            let x = [(t as f64).sin(), (t as f64 * 0.5).cos()];
            let s = cell.step(&params, &x, &h, &z).unwrap();
            h = s.h;
            z = s.z;
        }
        assert_eq!(z, z0);
    }

    #[test]
    fn bayes_mean_mode_closed_forms() {
        let mut layout = ParamLayout::new();
        let layer = BayesianLinear::register(&mut layout, "bnn", 2, 2);
        let mut params = vec![0.0; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        layer.set_sigma2(&mut params, 1.0).unwrap();
        assert_eq!(layer.forward(&params, &[1.0, 2.0], BayesMode::Mean, &mut rng).unwrap(), 0.5);

        // z = [1*1 + 2*0, 1*0.5 + 2*(-1)] = [1, -1.5]; logit = 2*1 + 1*(-1.5) + 0.25 = 0.75
        layer.weights_mut(&mut params).copy_from_slice(&[1.0, 0.0, 0.5, -1.0]);
        layer.phi_mut(&mut params).copy_from_slice(&[2.0, 1.0]);
        layer.set_bias(&mut params, 0.25);
        let p = layer.forward(&params, &[1.0, 2.0], BayesMode::Mean, &mut rng).unwrap();
        assert!((p - 1.0 / (1.0 + (-0.75f64).exp())).abs() < 1e-15);

        params[4] = 0.0; // sigma2 sits after the 2x2 weights
        assert!(layer.forward(&params, &[1.0, 2.0], BayesMode::Mean, &mut rng).is_err());
        assert!(layer.set_sigma2(&mut params, -1.0).is_err());
    }
}
