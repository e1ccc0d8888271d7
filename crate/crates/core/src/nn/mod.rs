//! Fully-connected beam predictor with exact backpropagation.
//!
//! Each layer computes `z = x·W + b`, an optional batch or layer
//! normalization with learned scale and shift, the activation, then inverted
//! dropout. Gradients are available both for parameters (training) and for
//! inputs (attacks).
//!
//! Dropout masks are drawn per batch row: row `i` of a batch forwarded with
//! seed `s` uses the stream `derive_seed(s, i)`, consumed layer by layer and
//! unit by unit. A row forwarded on its own with that row seed
//! ([`MlpParams::forward_rows`]) therefore sees the same masks, which is what
//! lets per-example gradients be checked against singleton batches.

mod checkpoint;
mod optim;
pub(crate) mod train;

pub use checkpoint::Checkpoint;
pub use optim::{Optimizer, RmsProp, Sgd, RMSPROP_DECAY, RMSPROP_EPS};
pub use train::{evaluate_mse, mse_of, train, EpochRecord, TrainConfig};

use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, SplitMix64};

/// Added to variances inside batch and layer normalization.
pub const NORM_EPS: f64 = 1e-8;

/// Weight of the newest batch statistics in the running averages
/// (`running ← 0.9·running + 0.1·batch`).
pub const BN_MOMENTUM: f64 = 0.9;
const BN_BATCH_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    BatchNorm,
    LayerNorm,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    pub normalization: Normalization,
    #[serde(default)]
    pub dropout_rate: f64,
}

impl LayerSpec {
    /// Identity output layer without normalization or dropout.
    pub fn output(width: usize) -> Self {
        Self {
            width,
            activation: Activation::Identity,
            normalization: Normalization::None,
            dropout_rate: 0.0,
        }
    }
}

/// `hidden` ReLU layers of width `width` followed by the output layer.
pub fn mlp_specs(hidden: usize, width: usize, norm: Normalization, dropout: f64, outputs: usize) -> Vec<LayerSpec> {
    let mut specs: Vec<LayerSpec> = (0..hidden)
        .map(|_| LayerSpec {
            width,
            activation: Activation::Relu,
            normalization: norm,
            dropout_rate: dropout,
        })
        .collect();
    specs.push(LayerSpec::output(outputs));
    specs
}

/// Default hidden width for an input of dimension `d`: `max(2d, 128)`.
pub fn default_width(input_dim: usize) -> usize {
    (2 * input_dim).max(128)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `fan_in × width`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    /// Normalization scale and shift, present for batch and layer norm.
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
    /// Batch-norm running statistics.
    pub running_mean: Option<Array1<f64>>,
    pub running_var: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub input_dim: usize,
    pub layers: Vec<Layer>,
}

/// Gradient of one layer's trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

/// Gradient with the same structure as the trainable part of [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<LayerGrad>,
}

impl Grads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.len()),
                    gamma: l.gamma.as_ref().map(|g| Array1::zeros(g.len())),
                    beta: l.beta.as_ref().map(|g| Array1::zeros(g.len())),
                })
                .collect(),
        }
    }

    /// Tensors in canonical order: per layer `W` (row-major), `b`, `γ`, `β`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.w.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
            if let Some(g) = &l.gamma {
                out.push(g.as_slice().expect("standard layout"));
            }
            if let Some(g) = &l.beta {
                out.push(g.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
            if let Some(g) = &mut l.gamma {
                out.push(g.as_slice_mut().expect("standard layout"));
            }
            if let Some(g) = &mut l.beta {
                out.push(g.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|g| g * g).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|g| g.is_finite()))
    }

    /// `self += a · other`.
    pub fn add_scaled(&mut self, a: f64, other: &Grads) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += a * s);
        }
    }

    pub fn scale(&mut self, a: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= a);
        }
    }
}

/// Per-layer intermediates of one forward pass.
#[derive(Debug, Clone)]
struct LayerCache {
    /// Layer input.
    input: Array2<f64>,
    /// Normalized pre-activation `x̂` (before scale and shift).
    xhat: Option<Array2<f64>>,
    /// `1/√(var + eps)`: per column for batch norm, per row for layer norm.
    inv_std: Option<Array1<f64>>,
    /// Batch mean and biased variance (batch norm, train mode).
    batch_stats: Option<(Array1<f64>, Array1<f64>)>,
    /// Value entering the activation.
    pre_act: Array2<f64>,
    /// Scaled dropout mask (`0` or `1/keep`).
    mask: Option<Array2<f64>>,
}

/// Everything `backward` needs from the forward pass it follows.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    rows: usize,
    layers: Vec<LayerCache>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Per-row gradient signals of one layer, before reduction over the batch.
struct LayerSignal {
    /// `∂L/∂z` for `z = x·W + b`.
    dz: Array2<f64>,
    /// `∂L/∂y` at the normalization output (scale/shift input is `x̂`).
    dy: Option<Array2<f64>>,
}

impl MlpParams {
    /// He-initialized weights `N(0, 2/fan_in)`, zero biases, unit scales,
    /// zero shifts. Weights are drawn layer by layer in row-major order from
    /// `derive_seed(seed, INIT)`.
    pub fn init(input_dim: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        if input_dim == 0 || specs.iter().any(|s| s.width == 0) {
            return Err(Error::Config("layer widths and input dim must be positive".into()));
        }
        for (i, s) in specs.iter().enumerate() {
            if !(0.0..1.0).contains(&s.dropout_rate) {
                return Err(Error::Config(format!(
                    "layer {i}: dropout_rate {} outside [0, 1)",
                    s.dropout_rate
                )));
            }
        }
        let last = specs.last().expect("non-empty");
        if last.activation != Activation::Identity || last.dropout_rate != 0.0 {
            return Err(Error::Config("output layer must be identity without dropout".into()));
        }
        let mut rng = SplitMix64::new(derive_seed(seed, stream::INIT));
        let mut fan_in = input_dim;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let std = (2.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_in, spec.width), || std * rng.standard_normal());
            let normed = spec.normalization != Normalization::None;
            let bn = spec.normalization == Normalization::BatchNorm;
            layers.push(Layer {
                spec: *spec,
                w,
                b: Array1::zeros(spec.width),
                gamma: normed.then(|| Array1::ones(spec.width)),
                beta: normed.then(|| Array1::zeros(spec.width)),
                running_mean: bn.then(|| Array1::zeros(spec.width)),
                running_var: bn.then(|| Array1::ones(spec.width)),
            });
            fan_in = spec.width;
        }
        Ok(Self { input_dim, layers })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.width)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn uses_batch_norm(&self) -> bool {
        self.layers
            .iter()
            .any(|l| l.spec.normalization == Normalization::BatchNorm)
    }

    pub fn num_params(&self) -> usize {
        Grads::zeros_like(self).tensors().iter().map(|t| t.len()).sum()
    }

    /// Trainable tensors in the canonical order of [`Grads::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
            if let Some(g) = &mut l.gamma {
                out.push(g.as_slice_mut().expect("standard layout"));
            }
            if let Some(g) = &mut l.beta {
                out.push(g.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    /// All tensors including running statistics, canonical order.
    pub fn all_tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.w.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
            for t in [&l.gamma, &l.beta, &l.running_mean, &l.running_var].into_iter().flatten() {
                out.push(t.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.all_tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over the little-endian bytes of every tensor.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in self.all_tensors() {
            for v in t {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Forward pass with row seeds `derive_seed(seed, i)`.
    pub fn forward(&self, x: &Array2<f64>, mode: Mode, seed: u64) -> Result<(Array2<f64>, ForwardCache)> {
        let seeds: Vec<u64> = if mode == Mode::Train && self.has_dropout() {
            (0..x.nrows()).map(|i| derive_seed(seed, i as u64)).collect()
        } else {
            Vec::new()
        };
        self.forward_rows(x, mode, &seeds)
    }

    /// Eval-mode predictions.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, Mode::Eval, 0)?.0)
    }

    fn has_dropout(&self) -> bool {
        self.layers.iter().any(|l| l.spec.dropout_rate > 0.0)
    }

    /// Forward pass with an explicit dropout seed per row. `row_seeds` may
    /// be empty when no dropout layer is active.
    pub fn forward_rows(&self, x: &Array2<f64>, mode: Mode, row_seeds: &[u64]) -> Result<(Array2<f64>, ForwardCache)> {
        let rows = x.nrows();
        if x.ncols() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        if rows == 0 {
            return Err(Error::Dimension("empty batch".into()));
        }
        if mode == Mode::Train && rows < 2 && self.uses_batch_norm() {
            return Err(Error::Config(
                "batch norm in train mode needs at least 2 rows".into(),
            ));
        }
        let dropout_active = mode == Mode::Train && self.has_dropout();
        if dropout_active && row_seeds.len() != rows {
            return Err(Error::Dimension(format!(
                "{} row seeds for a batch of {rows}",
                row_seeds.len()
            )));
        }
        let mut rngs: Vec<SplitMix64> = if dropout_active {
            row_seeds.iter().map(|&s| SplitMix64::new(s)).collect()
        } else {
            Vec::new()
        };

        let mut caches = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let z = a.dot(&layer.w) + &layer.b;
            let (pre_act, xhat, inv_std, batch_stats) = match layer.spec.normalization {
                Normalization::None => (z, None, None, None),
                Normalization::BatchNorm => {
                    let (mean, var) = match mode {
                        Mode::Train => {
                            let mean = z.mean_axis(Axis(0)).expect("rows > 0");
                            let var = z.var_axis(Axis(0), 0.0);
                            (mean, var)
                        }
                        Mode::Eval => (
                            layer.running_mean.clone().expect("batch norm state"),
                            layer.running_var.clone().expect("batch norm state"),
                        ),
                    };
                    let inv = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
                    let xhat = (&z - &mean) * &inv;
                    let y = &xhat * layer.gamma.as_ref().expect("scale") + layer.beta.as_ref().expect("shift");
                    let stats = (mode == Mode::Train).then_some((mean, var));
                    (y, Some(xhat), Some(inv), stats)
                }
                Normalization::LayerNorm => {
                    let mean = z.mean_axis(Axis(1)).expect("cols > 0");
                    let var = z.var_axis(Axis(1), 0.0);
                    let inv = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
                    let mut xhat = z;
                    for ((mut row, m), s) in xhat.rows_mut().into_iter().zip(&mean).zip(&inv) {
                        row.mapv_inplace(|v| (v - m) * s);
                    }
                    let y = &xhat * layer.gamma.as_ref().expect("scale") + layer.beta.as_ref().expect("shift");
                    (y, Some(xhat), Some(inv), None)
                }
            };
            let mut out = match layer.spec.activation {
                Activation::Relu => pre_act.mapv(|v| v.max(0.0)),
                Activation::Identity => pre_act.clone(),
            };
            let p = layer.spec.dropout_rate;
            let mask = if dropout_active && p > 0.0 {
                let keep = 1.0 / (1.0 - p);
                let mut m = Array2::zeros(out.raw_dim());
                for (mut row, rng) in m.rows_mut().into_iter().zip(rngs.iter_mut()) {
                    row.iter_mut()
                        .for_each(|v| *v = if rng.next_f64() >= p { keep } else { 0.0 });
                }
                out *= &m;
                Some(m)
            } else {
                None
            };
            caches.push(LayerCache {
                input: a,
                xhat,
                inv_std,
                batch_stats,
                pre_act,
                mask,
            });
            a = out;
        }
        Ok((
            a.clone(),
            ForwardCache {
                mode,
                rows,
                layers: caches,
                output: a,
            },
        ))
    }

    /// Folds the batch statistics of a train-mode forward pass into the
    /// batch-norm running averages. Running variance uses the unbiased
    /// batch estimate.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let n = cache.rows as f64;
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Some((mean, var)), Some(rm), Some(rv)) =
                (&lc.batch_stats, layer.running_mean.as_mut(), layer.running_var.as_mut())
            {
                let unbiased = n / (n - 1.0);
                Zip::from(rm).and(mean).for_each(|r, &m| *r = BN_MOMENTUM * *r + BN_BATCH_WEIGHT * m);
                Zip::from(rv)
                    .and(var)
                    .for_each(|r, &v| *r = BN_MOMENTUM * *r + BN_BATCH_WEIGHT * v * unbiased);
            }
        }
    }

    fn check_cache(&self, cache: &ForwardCache, labels: &Array2<f64>) -> Result<()> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache("layer count differs from the network".into()));
        }
        for (l, lc) in self.layers.iter().zip(&cache.layers) {
            if lc.input.ncols() != l.w.nrows() || lc.pre_act.ncols() != l.w.ncols() {
                return Err(Error::StaleCache("cached shapes differ from the network".into()));
            }
        }
        if labels.dim() != cache.output.dim() {
            return Err(Error::StaleCache(format!(
                "labels {:?} do not match cached batch {:?}",
                labels.dim(),
                cache.output.dim()
            )));
        }
        Ok(())
    }

    /// Back-propagates `dout = ∂L/∂output` and returns per-layer signals
    /// plus `∂L/∂input`.
    fn backprop(&self, cache: &ForwardCache, dout: Array2<f64>) -> (Vec<LayerSignal>, Array2<f64>) {
        let mut signals: Vec<LayerSignal> = Vec::with_capacity(self.layers.len());
        let mut da = dout;
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            if let Some(m) = &lc.mask {
                da *= m;
            }
            if layer.spec.activation == Activation::Relu {
                Zip::from(&mut da).and(&lc.pre_act).for_each(|d, &p| {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let (dz, dy) = match layer.spec.normalization {
                Normalization::None => (da, None),
                Normalization::BatchNorm => {
                    let gamma = layer.gamma.as_ref().expect("scale");
                    let xhat = lc.xhat.as_ref().expect("cached x̂");
                    let inv = lc.inv_std.as_ref().expect("cached inv std");
                    let dxhat = &da * gamma;
                    let dz = match cache.mode {
                        Mode::Eval => &dxhat * inv,
                        Mode::Train => {
                            let n = cache.rows as f64;
                            let sum_d = dxhat.sum_axis(Axis(0));
                            let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                            let mut dz = dxhat * n - &sum_d - &(xhat * &sum_dx);
                            dz *= &(inv / n);
                            dz
                        }
                    };
                    (dz, Some(da))
                }
                Normalization::LayerNorm => {
                    let gamma = layer.gamma.as_ref().expect("scale");
                    let xhat = lc.xhat.as_ref().expect("cached x̂");
                    let inv = lc.inv_std.as_ref().expect("cached inv std");
                    let dxhat = &da * gamma;
                    let d = dxhat.ncols() as f64;
                    let mut dz = Array2::zeros(dxhat.raw_dim());
                    for (((mut out, dr), xr), &s) in dz
                        .rows_mut()
                        .into_iter()
                        .zip(dxhat.rows())
                        .zip(xhat.rows())
                        .zip(inv)
                    {
                        let sum_d = dr.sum();
                        let sum_dx = dr.dot(&xr);
                        Zip::from(&mut out)
                            .and(&dr)
                            .and(&xr)
                            .for_each(|o, &g, &xh| *o = s / d * (d * g - sum_d - xh * sum_dx));
                    }
                    (dz, Some(da))
                }
            };
            da = dz.dot(&layer.w.t());
            signals.push(LayerSignal { dz, dy });
        }
        signals.reverse();
        (signals, da)
    }

    /// Reduces per-row signals into parameter gradients, weighting row `i`
    /// by `weights[i]` (all ones when `None`).
    fn reduce(&self, cache: &ForwardCache, signals: &[LayerSignal], weights: Option<&Array1<f64>>) -> Grads {
        let layers = self
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(signals)
            .map(|((_, lc), sig)| {
                let dz = match weights {
                    Some(w) => &sig.dz * &w.view().insert_axis(Axis(1)),
                    None => sig.dz.clone(),
                };
                let (gamma, beta) = match &sig.dy {
                    Some(dy) => {
                        let dy = match weights {
                            Some(w) => dy * &w.view().insert_axis(Axis(1)),
                            None => dy.clone(),
                        };
                        let xhat = lc.xhat.as_ref().expect("cached x̂");
                        (Some((&dy * xhat).sum_axis(Axis(0))), Some(dy.sum_axis(Axis(0))))
                    }
                    None => (None, None),
                };
                LayerGrad {
                    w: lc.input.t().dot(&dz),
                    b: dz.sum_axis(Axis(0)),
                    gamma,
                    beta,
                }
            })
            .collect();
        Grads { layers }
    }

    /// Exact gradients of [`mse_loss`] with respect to every trainable
    /// parameter and every input coordinate.
    pub fn backward(&self, cache: &ForwardCache, labels: &Array2<f64>) -> Result<(Grads, Array2<f64>)> {
        self.check_cache(cache, labels)?;
        let scale = 2.0 / labels.len() as f64;
        let dout = (&cache.output - labels) * scale;
        let (signals, dx) = self.backprop(cache, dout);
        Ok((self.reduce(cache, &signals, None), dx))
    }

    /// Per-row loss signal `∂ℓ_i/∂output_i` with `ℓ_i` the mean squared
    /// error of row `i` alone.
    fn per_row_dout(cache: &ForwardCache, labels: &Array2<f64>) -> Array2<f64> {
        (&cache.output - labels) * (2.0 / labels.ncols() as f64)
    }

    /// Gradient of each row's own loss `ℓ_i` with respect to its input.
    ///
    /// Rows only decouple when the pass has no batch statistics, so this is
    /// restricted to eval mode or networks without batch norm.
    pub fn per_row_input_grad(&self, cache: &ForwardCache, labels: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_cache(cache, labels)?;
        self.require_decoupled(cache)?;
        let (_, dx) = self.backprop(cache, Self::per_row_dout(cache, labels));
        Ok(dx)
    }

    fn require_decoupled(&self, cache: &ForwardCache) -> Result<()> {
        if cache.mode == Mode::Train && self.uses_batch_norm() {
            return Err(Error::Config(
                "batch norm couples rows in train mode; per-example quantities are undefined".into(),
            ));
        }
        Ok(())
    }

    /// Per-example parameter gradients, each equal to [`Self::backward`] on
    /// the singleton batch of that row (with the same row seed).
    pub fn per_example_grads(&self, cache: &ForwardCache, labels: &Array2<f64>) -> Result<Vec<Grads>> {
        self.check_cache(cache, labels)?;
        self.require_decoupled(cache)?;
        let (signals, _) = self.backprop(cache, Self::per_row_dout(cache, labels));
        let mut out = Vec::with_capacity(cache.rows);
        for i in 0..cache.rows {
            let mut w = Array1::zeros(cache.rows);
            w[i] = 1.0;
            out.push(self.reduce(cache, &signals, Some(&w)));
        }
        Ok(out)
    }

    /// Per-example gradient norms and the sum of per-example gradients with
    /// row `i` scaled by `clip(norm_i)`, computed without materializing the
    /// individual gradients.
    ///
    /// For `z = x·W + b` the example's weight gradient is the outer product
    /// `x_iᵀ·dz_i`, whose squared Frobenius norm is `‖x_i‖²·‖dz_i‖²`; the
    /// normalization scale gradient is `dy_i ⊙ x̂_i` and its shift gradient
    /// `dy_i`.
    pub fn clipped_gradient_sum(
        &self,
        cache: &ForwardCache,
        labels: &Array2<f64>,
        clip: impl Fn(f64) -> f64,
    ) -> Result<(Grads, Vec<f64>)> {
        self.check_cache(cache, labels)?;
        self.require_decoupled(cache)?;
        let (signals, _) = self.backprop(cache, Self::per_row_dout(cache, labels));
        let mut norm_sqr = Array1::<f64>::zeros(cache.rows);
        let row_sq = |m: &Array2<f64>| m.map_axis(Axis(1), |r| r.dot(&r));
        for (lc, sig) in cache.layers.iter().zip(&signals) {
            let dz_sq = row_sq(&sig.dz);
            norm_sqr = norm_sqr + &(row_sq(&lc.input) + 1.0) * &dz_sq;
            if let Some(dy) = &sig.dy {
                let xhat = lc.xhat.as_ref().expect("cached x̂");
                norm_sqr = norm_sqr + row_sq(&(dy * xhat)) + row_sq(dy);
            }
        }
        let norms: Vec<f64> = norm_sqr.iter().map(|v| v.sqrt()).collect();
        let weights = Array1::from_iter(norms.iter().map(|&n| clip(n)));
        Ok((self.reduce(cache, &signals, Some(&weights)), norms))
    }

    /// `params -= lr · grads` over the trainable tensors.
    pub fn apply_update(&mut self, grads: &Grads, lr: f64) {
        for (p, g) in self.tensors_mut().into_iter().zip(grads.tensors()) {
            p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        }
    }
}

/// Mean over batch and output dimensions of the squared difference.
pub fn mse_loss(predictions: &Array2<f64>, labels: &Array2<f64>) -> Result<f64> {
    if predictions.dim() != labels.dim() {
        return Err(Error::Dimension(format!(
            "predictions {:?} vs labels {:?}",
            predictions.dim(),
            labels.dim()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Dimension("empty batch".into()));
    }
    let sum: f64 = Zip::from(predictions)
        .and(labels)
        .fold(0.0, |acc, &p, &l| acc + (p - l) * (p - l));
    Ok(sum / labels.len() as f64)
}

/// Squared error of each row, averaged over outputs.
pub fn per_row_mse(predictions: &Array2<f64>, labels: &Array2<f64>) -> Result<Vec<f64>> {
    if predictions.dim() != labels.dim() {
        return Err(Error::Dimension(format!(
            "predictions {:?} vs labels {:?}",
            predictions.dim(),
            labels.dim()
        )));
    }
    let cols = labels.ncols() as f64;
    Ok(predictions
        .rows()
        .into_iter()
        .zip(labels.rows())
        .map(|(p, l)| p.iter().zip(l).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / cols)
        .collect())
}
