use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::{MlpParams, Optimizer};
use crate::dataset::{Dataset, SplitPart};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, SplitMix64};

/// Rows per chunk when evaluating large splits.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-batch training losses seen during the epoch.
    pub batch_loss: f64,
    /// Eval-mode MSE over the full train split after the epoch.
    pub train_mse: f64,
    /// Eval-mode MSE over the validation split, if it is non-empty.
    pub val_mse: Option<f64>,
}

/// Shuffled mini-batches of `0..n` for one epoch. With batch norm a
/// trailing batch of a single row is dropped, since its variance is
/// undefined.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize, drop_singleton: bool) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(derive_seed(derive_seed(seed, stream::SHUFFLE), epoch as u64)).shuffle(&mut order);
    order
        .chunks(batch_size)
        .filter(|c| !(drop_singleton && c.len() == 1))
        .map(|c| c.to_vec())
        .collect()
}

/// Dropout seed of global step `step`.
pub(crate) fn step_seed(seed: u64, step: u64) -> u64 {
    derive_seed(derive_seed(seed, stream::DROPOUT), step)
}

pub(crate) fn gather(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    m.select(ndarray::Axis(0), rows)
}

/// Eval-mode MSE over a feature/label pair, accumulated chunk by chunk.
pub fn mse_of(params: &MlpParams, x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension("feature and label row counts differ".into()));
    }
    if x.nrows() == 0 {
        return Err(Error::Dimension("empty evaluation set".into()));
    }
    let mut sum = 0.0;
    for start in (0..x.nrows()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(x.nrows());
        let pred = params.predict(&x.slice(s![start..end, ..]).to_owned())?;
        sum += ndarray::Zip::from(&pred)
            .and(y.slice(s![start..end, ..]))
            .fold(0.0, |acc, &p, &l| acc + (p - l) * (p - l));
    }
    Ok(sum / y.len() as f64)
}

/// Eval-mode MSE on one split of a dataset.
pub fn evaluate_mse(params: &MlpParams, dataset: &Dataset, part: SplitPart) -> Result<f64> {
    let idx = dataset.indices(part);
    mse_of(params, &dataset.features(idx), &dataset.labels(idx))
}

/// Mini-batch training on the train split. Epoch `e` shuffles with
/// `derive_seed(derive_seed(seed, SHUFFLE), e)`; global step `t` uses the
/// dropout seed `derive_seed(derive_seed(seed, DROPOUT), t)`.
pub fn train(
    params: &mut MlpParams,
    dataset: &Dataset,
    cfg: &TrainConfig,
    optimizer: &mut dyn Optimizer,
) -> Result<Vec<EpochRecord>> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if dataset.split.train.is_empty() {
        return Err(Error::Config("training needs a non-empty train split".into()));
    }
    let train_idx = dataset.indices(SplitPart::Train);
    let x = dataset.features(train_idx);
    let y = dataset.labels(train_idx);
    let has_val = !dataset.split.val.is_empty();
    let (xv, yv) = (
        dataset.features(&dataset.split.val),
        dataset.labels(&dataset.split.val),
    );
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(x.nrows(), cfg.batch_size, cfg.seed, epoch, params.uses_batch_norm());
        let mut loss_sum = 0.0;
        for b in &batches {
            loss_sum += optimizer.step(params, &gather(&x, b), &gather(&y, b), step_seed(cfg.seed, step))?;
            step += 1;
        }
        if !params.is_finite() {
            return Err(Error::Divergence(format!("parameters non-finite after epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            batch_loss: loss_sum / batches.len().max(1) as f64,
            train_mse: mse_of(params, &x, &y)?,
            val_mse: if has_val { Some(mse_of(params, &xv, &yv)?) } else { None },
        });
    }
    Ok(history)
}
