use ndarray::Array2;

use super::{Grads, MlpParams, Mode};
use crate::error::{Error, Result};

pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-8;
/// Weight of the new squared gradient, `1 - RMSPROP_DECAY` written exactly.
const RMSPROP_GRAD_WEIGHT: f64 = 0.1;

/// One parameter update from a mini-batch.
pub trait Optimizer {
    /// Runs forward/backward on `(x, y)` with dropout seed `step_seed`,
    /// updates `params`, and returns the batch loss before the update.
    fn step(&mut self, params: &mut MlpParams, x: &Array2<f64>, y: &Array2<f64>, step_seed: u64) -> Result<f64>;
}

/// RMSprop: `acc ← 0.9·acc + 0.1·g²`, `p ← p − lr·g/(√acc + 1e-8)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    /// Square-gradient accumulators in canonical tensor order; created
    /// lazily on the first step.
    pub acc: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            acc: Vec::new(),
        }
    }

    /// Applies one update with precomputed gradients. Non-finite gradients
    /// leave both parameters and state untouched.
    pub fn apply(&mut self, params: &mut MlpParams, grads: &Grads) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Divergence("non-finite gradient in RMSprop step".into()));
        }
        let tensors = grads.tensors();
        if self.acc.is_empty() {
            self.acc = tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        }
        if self.acc.len() != tensors.len() || self.acc.iter().zip(&tensors).any(|(a, t)| a.len() != t.len()) {
            return Err(Error::Dimension("optimizer state does not match parameters".into()));
        }
        let lr = self.learning_rate;
        for ((p, g), acc) in params.tensors_mut().into_iter().zip(tensors).zip(&mut self.acc) {
            for ((p, &g), a) in p.iter_mut().zip(g).zip(acc.iter_mut()) {
                *a = RMSPROP_DECAY * *a + RMSPROP_GRAD_WEIGHT * g * g;
                *p -= lr * g / (a.sqrt() + RMSPROP_EPS);
            }
        }
        Ok(())
    }
}

impl Optimizer for RmsProp {
    fn step(&mut self, params: &mut MlpParams, x: &Array2<f64>, y: &Array2<f64>, step_seed: u64) -> Result<f64> {
        let (pred, cache) = params.forward(x, Mode::Train, step_seed)?;
        let loss = super::mse_loss(&pred, y)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("training loss is {loss}")));
        }
        let (grads, _) = params.backward(&cache, y)?;
        self.apply(params, &grads)?;
        params.update_running_stats(&cache);
        Ok(loss)
    }
}

/// Plain gradient descent `p ← p − lr·g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut MlpParams, x: &Array2<f64>, y: &Array2<f64>, step_seed: u64) -> Result<f64> {
        let (pred, cache) = params.forward(x, Mode::Train, step_seed)?;
        let loss = super::mse_loss(&pred, y)?;
        let (grads, _) = params.backward(&cache, y)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Divergence("non-finite loss or gradient in SGD step".into()));
        }
        params.apply_update(&grads, self.learning_rate);
        params.update_running_stats(&cache);
        Ok(loss)
    }
}
