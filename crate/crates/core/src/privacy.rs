//! DP-SGD (per-example clipping plus Gaussian noise) and a Rényi-DP
//! accountant for the Poisson-subsampled Gaussian mechanism.
//!
//! Adjacent datasets differ in one sample (one user's record). Private
//! training rejects batch norm, which couples the examples of a batch and
//! leaves per-example gradients undefined.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{mse_loss, train, EpochRecord, Grads, MlpParams, Mode, Optimizer, TrainConfig};
use crate::rng::{derive_seed, stream, SplitMix64};

/// Integer Rényi orders tracked by the accountant.
pub const RDP_ORDERS: std::ops::RangeInclusive<u32> = 2..=64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Per-example L2 clipping bound `C` over all parameters jointly.
    pub clip_norm: f64,
    /// `σ`; the noise standard deviation is `σ·C`.
    pub noise_multiplier: f64,
    pub delta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config(format!("clip_norm must be positive, got {}", self.clip_norm)));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::Config(format!(
                "noise_multiplier must be >= 0, got {}",
                self.noise_multiplier
            )));
        }
        check_delta(self.delta)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("privacy learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("privacy batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Clip factor `min(1, C/‖g‖)`.
#[inline]
pub fn clip_factor(norm: f64, clip_norm: f64) -> f64 {
    if norm <= clip_norm {
        1.0
    } else {
        clip_norm / norm
    }
}

/// Adds `N(0, (σC)²)` to every coordinate of `sum` in canonical tensor
/// order, divides by the batch size and takes a gradient-descent step.
fn noise_and_update(params: &mut MlpParams, mut sum: Grads, batch: usize, cfg: &DpConfig, step_seed: u64) {
    let std = cfg.noise_multiplier * cfg.clip_norm;
    let mut rng = SplitMix64::new(derive_seed(step_seed, stream::PRIVACY));
    let inv_b = 1.0 / batch as f64;
    for t in sum.tensors_mut() {
        for g in t.iter_mut() {
            *g = (*g + std * rng.standard_normal()) * inv_b;
        }
    }
    params.apply_update(&sum, cfg.learning_rate);
}

/// One DP-SGD update from explicit per-example gradients. Noise for the
/// step comes from the stream `derive_seed(step_seed, PRIVACY)`.
pub fn dp_sgd_step(params: &mut MlpParams, per_example: &[Grads], cfg: &DpConfig, step_seed: u64) -> Result<()> {
    cfg.validate()?;
    if per_example.is_empty() {
        return Err(Error::Dimension("DP-SGD step with an empty batch".into()));
    }
    let mut sum = Grads::zeros_like(params);
    for g in per_example {
        if !g.is_finite() {
            return Err(Error::Divergence("non-finite per-example gradient".into()));
        }
        sum.add_scaled(clip_factor(g.norm_sqr().sqrt(), cfg.clip_norm), g);
    }
    noise_and_update(params, sum, per_example.len(), cfg, step_seed);
    Ok(())
}

/// Per-example gradients of each row's own loss. Equal to `backward` on
/// each singleton batch forwarded with row seed `derive_seed(seed, i)`.
pub fn per_example_gradients(
    params: &MlpParams,
    x: &Array2<f64>,
    y: &Array2<f64>,
    mode: Mode,
    seed: u64,
) -> Result<Vec<Grads>> {
    require_private_architecture(params)?;
    let (_, cache) = params.forward(x, mode, seed)?;
    params.per_example_grads(&cache, y)
}

pub fn require_private_architecture(params: &MlpParams) -> Result<()> {
    if params.uses_batch_norm() {
        return Err(Error::Config(
            "private training needs per-example gradients; replace batch_norm with layer_norm".into(),
        ));
    }
    Ok(())
}

/// DP-SGD as an [`Optimizer`]. Per-example norms and the clipped sum come
/// from [`MlpParams::clipped_gradient_sum`]; the largest clipped norm seen
/// is kept for auditing.
#[derive(Debug, Clone)]
pub struct DpSgd {
    pub cfg: DpConfig,
    pub max_clipped_norm: f64,
    pub steps: u64,
}

impl DpSgd {
    pub fn new(cfg: DpConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            max_clipped_norm: 0.0,
            steps: 0,
        })
    }
}

impl Optimizer for DpSgd {
    fn step(&mut self, params: &mut MlpParams, x: &Array2<f64>, y: &Array2<f64>, step_seed: u64) -> Result<f64> {
        require_private_architecture(params)?;
        let (pred, cache) = params.forward(x, Mode::Train, step_seed)?;
        let loss = mse_loss(&pred, y)?;
        let c = self.cfg.clip_norm;
        let (sum, norms) = params.clipped_gradient_sum(&cache, y, |n| clip_factor(n, c))?;
        if !loss.is_finite() || norms.iter().any(|n| !n.is_finite()) {
            return Err(Error::Divergence("non-finite per-example gradient".into()));
        }
        for &n in &norms {
            self.max_clipped_norm = self.max_clipped_norm.max(n * clip_factor(n, c));
        }
        noise_and_update(params, sum, x.nrows(), &self.cfg, step_seed);
        self.steps += 1;
        Ok(loss)
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn ln_binomial(n: u32, k: u32) -> f64 {
    let mut acc = 0.0;
    for i in 0..k {
        acc += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    acc
}

/// Rényi divergence of order `order` for one step of the Poisson-subsampled
/// Gaussian mechanism:
/// `log(Σ_k C(λ,k)(1−q)^{λ−k} q^k exp((k²−k)/(2σ²))) / (λ−1)`.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, order: u32) -> f64 {
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    if q == 0.0 {
        return 0.0;
    }
    let ln_q = q.ln();
    let ln_1mq = if q >= 1.0 { f64::NEG_INFINITY } else { (-q).ln_1p() };
    let mut log_a = f64::NEG_INFINITY;
    for k in 0..=order {
        let mut term = ln_binomial(order, k) + (k as f64) * ln_q;
        if order > k {
            term += (order - k) as f64 * ln_1mq;
        }
        term += ((k * k) as f64 - k as f64) / (2.0 * sigma * sigma);
        log_a = log_add(log_a, term);
    }
    (log_a / (order as f64 - 1.0)).max(0.0)
}

/// Accumulated Rényi divergences at orders 2..=64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub steps: u64,
    pub sampling_rate: f64,
    pub noise_multiplier: f64,
    /// `rdp[i]` belongs to order `i + 2`.
    pub rdp: Vec<f64>,
    pub delta: f64,
    /// ε* at `delta` for the current accumulators; `inf` serializes as null.
    pub epsilon: f64,
}

impl PrivacyLedger {
    pub fn new(sampling_rate: f64, noise_multiplier: f64, delta: f64) -> Result<Self> {
        if !(sampling_rate > 0.0 && sampling_rate <= 1.0) {
            return Err(Error::Config(format!("sampling rate must lie in (0, 1], got {sampling_rate}")));
        }
        if !(noise_multiplier >= 0.0) {
            return Err(Error::Config("noise multiplier must be >= 0".into()));
        }
        check_delta(delta)?;
        Ok(Self {
            steps: 0,
            sampling_rate,
            noise_multiplier,
            rdp: vec![0.0; RDP_ORDERS.count()],
            delta,
            epsilon: 0.0,
        })
    }

    /// Adds `steps` more compositions of the mechanism.
    pub fn record_steps(&mut self, steps: u64) {
        if steps == 0 {
            return;
        }
        for (acc, order) in self.rdp.iter_mut().zip(RDP_ORDERS) {
            *acc += steps as f64 * rdp_subsampled_gaussian(self.sampling_rate, self.noise_multiplier, order);
        }
        self.steps += steps;
        self.epsilon = self.epsilon_at(self.delta);
    }

    /// `min_λ [RDP(λ) + ln(1/δ)/(λ−1)]`, or 0 before any step.
    pub fn epsilon_at(&self, delta: f64) -> f64 {
        if self.steps == 0 {
            return 0.0;
        }
        let ln_inv_delta = -delta.ln();
        self.rdp
            .iter()
            .zip(RDP_ORDERS)
            .map(|(&r, order)| r + ln_inv_delta / (order as f64 - 1.0))
            .fold(f64::INFINITY, f64::min)
    }
}

/// ε* after `steps` steps at sampling rate `q` and noise multiplier `σ`.
pub fn account_privacy(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<f64> {
    let mut ledger = PrivacyLedger::new(q, sigma, delta)?;
    ledger.record_steps(steps);
    Ok(ledger.epsilon)
}

/// Smallest noise multiplier (to a relative precision of 1e-6) whose ε*
/// does not exceed `target`.
pub fn noise_for_target_epsilon(target: f64, q: f64, steps: u64, delta: f64) -> Result<f64> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::Config(format!("target epsilon must be positive, got {target}")));
    }
    let (mut lo, mut hi) = (1e-3, 1e4);
    if account_privacy(q, hi, steps, delta)? > target {
        return Err(Error::Config(format!("target epsilon {target} unreachable with sigma <= {hi}")));
    }
    if account_privacy(q, lo, steps, delta)? <= target {
        return Ok(lo);
    }
    while hi / lo > 1.0 + 1e-6 {
        let mid = (lo * hi).sqrt();
        if account_privacy(q, mid, steps, delta)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivateEpochRecord {
    #[serde(flatten)]
    pub record: EpochRecord,
    /// ε* after this epoch.
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct PrivateTraining {
    pub ledger: PrivacyLedger,
    pub history: Vec<PrivateEpochRecord>,
    pub max_clipped_norm: f64,
}

/// Full DP-SGD run on the train split. The ledger treats each batch as a
/// Poisson sample at rate `batch_size / n_train`.
pub fn train_private(params: &mut MlpParams, dataset: &Dataset, cfg: &DpConfig) -> Result<PrivateTraining> {
    cfg.validate()?;
    require_private_architecture(params)?;
    let n = dataset.split.train.len();
    if n == 0 {
        return Err(Error::Config("private training needs a non-empty train split".into()));
    }
    let q = (cfg.batch_size as f64 / n as f64).min(1.0);
    let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let mut opt = DpSgd::new(*cfg)?;
    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    let records = train(params, dataset, &tc, &mut opt)?;
    let mut ledger = PrivacyLedger::new(q, cfg.noise_multiplier, cfg.delta)?;
    let mut history = Vec::with_capacity(records.len());
    for rec in records {
        ledger.record_steps(steps_per_epoch);
        history.push(PrivateEpochRecord {
            record: rec,
            epsilon: ledger.epsilon,
        });
    }
    Ok(PrivateTraining {
        ledger,
        history,
        max_clipped_norm: opt.max_clipped_norm,
    })
}
