//! Adversarial training: each round attacks the training split with the
//! current (frozen) model, then trains one epoch on batches that mix clean
//! and adversarial rows.

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, AttackSpec};
use crate::dataset::{Dataset, SplitPart};
use crate::error::{Error, Result};
use crate::nn::train::{epoch_batches, gather, mse_of, step_seed};
use crate::nn::{MlpParams, Optimizer};
use crate::rng::derive_seed;

const ROUND_ATTACK_STREAM: u64 = 0x6164_7672;
const VAL_ATTACK_STREAM: u64 = 0x7661_6c61;
const REINIT_STREAM: u64 = 0x7265_696e;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvTrainConfig {
    /// Inner maximizer.
    pub attack: AttackSpec,
    /// Fraction of each batch replaced by adversarial rows, in `(0, 1]`.
    pub mix_ratio: f64,
    pub max_rounds: usize,
    /// Relative change of validation clean MSE counted as a plateau.
    pub plateau_tol: f64,
    /// Consecutive plateau rounds that stop training.
    pub plateau_window: usize,
    /// Re-initialize the model before the first round instead of
    /// fine-tuning it.
    pub from_scratch: bool,
    pub batch_size: usize,
    pub seed: u64,
}

impl AdvTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.attack.validate()?;
        if !(self.mix_ratio > 0.0 && self.mix_ratio <= 1.0) {
            return Err(Error::Config(format!("mix_ratio must lie in (0, 1], got {}", self.mix_ratio)));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        if !(self.plateau_tol >= 0.0) || self.plateau_window == 0 {
            return Err(Error::Config("plateau_tol must be >= 0 and plateau_window >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Adversarial rows in a batch of `b`: `floor(b · mix_ratio)`.
    pub fn adversarial_rows(&self, b: usize) -> usize {
        ((b as f64 * self.mix_ratio) + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxRounds,
    Plateau,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub train_loss: f64,
    pub val_clean_mse: f64,
    pub val_adv_mse: f64,
    /// Largest `‖x_adv − x‖∞` among the adversarial training rows.
    pub max_perturbation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvTrainOutcome {
    /// Final parameters; after divergence, the last finite ones.
    pub params: MlpParams,
    pub history: Vec<RoundRecord>,
    pub stop: StopReason,
}

/// Number of trailing rounds whose relative change of `series` stays
/// below `tol`.
fn plateau_run(series: &[f64], tol: f64) -> usize {
    series
        .windows(2)
        .rev()
        .take_while(|w| {
            let denom = w[0].abs();
            let rel = if denom > 0.0 { (w[1] - w[0]).abs() / denom } else { (w[1] - w[0]).abs() };
            rel < tol
        })
        .count()
}

/// Runs rounds until `max_rounds`, a plateau of the validation clean MSE
/// (relative change below `plateau_tol` for `plateau_window` consecutive
/// rounds), or divergence.
///
/// Round `r` attacks the train split with seed
/// `derive_seed(derive_seed(cfg.seed, ROUND_ATTACK), r)` and shuffles and
/// steps exactly like epoch `r` of [`crate::nn::train`] with `cfg.seed`.
/// Each batch keeps its first `b − floor(b·mix_ratio)` rows clean and uses
/// the adversarial variants of the rest, so with `ε = 0` a round is one
/// ordinary training epoch.
pub fn adversarial_train(
    mut params: MlpParams,
    dataset: &Dataset,
    cfg: &AdvTrainConfig,
    optimizer: &mut dyn Optimizer,
) -> Result<AdvTrainOutcome> {
    cfg.validate()?;
    if dataset.split.train.is_empty() || dataset.split.val.is_empty() {
        return Err(Error::Config("adversarial training needs train and validation splits".into()));
    }
    if cfg.from_scratch {
        params = MlpParams::init(params.input_dim, &params.specs(), derive_seed(cfg.seed, REINIT_STREAM))?;
    }
    let x = dataset.features(dataset.indices(SplitPart::Train));
    let y = dataset.labels(dataset.indices(SplitPart::Train));
    let xv = dataset.features(dataset.indices(SplitPart::Val));
    let yv = dataset.labels(dataset.indices(SplitPart::Val));

    let mut history: Vec<RoundRecord> = Vec::new();
    let mut clean_series = Vec::new();
    let mut step = 0u64;
    for round in 0..cfg.max_rounds {
        let last_good = params.clone();
        let result = (|| -> Result<RoundRecord> {
            let mut spec = cfg.attack;
            spec.seed = derive_seed(derive_seed(cfg.seed, ROUND_ATTACK_STREAM), round as u64);
            let adv = run_attack(&params, &x, &y, &spec)?;
            let max_perturbation = (&adv - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let batches = epoch_batches(x.nrows(), cfg.batch_size, cfg.seed, round, params.uses_batch_norm());
            let mut loss_sum = 0.0;
            for b in &batches {
                let n_adv = cfg.adversarial_rows(b.len());
                let (clean, attacked) = b.split_at(b.len() - n_adv);
                let xb = concatenate(Axis(0), &[gather(&x, clean).view(), gather(&adv, attacked).view()])
                    .map_err(|e| Error::Dimension(e.to_string()))?;
                let yb = gather(&y, b);
                loss_sum += optimizer.step(&mut params, &xb, &yb, step_seed(cfg.seed, step))?;
                step += 1;
            }
            if !params.is_finite() {
                return Err(Error::Divergence(format!("non-finite parameters in round {round}")));
            }
            let mut vspec = cfg.attack;
            vspec.seed = derive_seed(derive_seed(cfg.seed, VAL_ATTACK_STREAM), round as u64);
            let adv_v: Array2<f64> = run_attack(&params, &xv, &yv, &vspec)?;
            Ok(RoundRecord {
                round,
                train_loss: loss_sum / batches.len().max(1) as f64,
                val_clean_mse: mse_of(&params, &xv, &yv)?,
                val_adv_mse: mse_of(&params, &adv_v, &yv)?,
                max_perturbation,
            })
        })();
        match result {
            Ok(rec) => {
                if !(rec.val_clean_mse.is_finite() && rec.val_adv_mse.is_finite()) {
                    return Ok(AdvTrainOutcome {
                        params: last_good,
                        history,
                        stop: StopReason::Diverged,
                    });
                }
                clean_series.push(rec.val_clean_mse);
                history.push(rec);
                if plateau_run(&clean_series, cfg.plateau_tol) >= cfg.plateau_window {
                    return Ok(AdvTrainOutcome {
                        params,
                        history,
                        stop: StopReason::Plateau,
                    });
                }
            }
            Err(Error::Divergence(_)) | Err(Error::NonFinite(_)) => {
                return Ok(AdvTrainOutcome {
                    params: last_good,
                    history,
                    stop: StopReason::Diverged,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(AdvTrainOutcome {
        params,
        history,
        stop: StopReason::MaxRounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::AttackKind;
    use crate::dataset::{Sample, Split};
    use crate::nn::{mlp_specs, train, Normalization, RmsProp, TrainConfig};
    use crate::rng::SplitMix64;

    fn toy_dataset(n: usize) -> Dataset {
        let mut rng = SplitMix64::new(5);
        let samples = (0..n)
            .map(|i| {
                let f: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
                let r: Vec<f64> = (0..3).map(|j| (f[j] * 0.5).tanh().abs()).collect();
                Sample {
                    features: f,
                    label_rates: r,
                    label_beam: 0,
                    user_id: i,
                    bs_id: 0,
                    rate_scale: 1.0,
                }
            })
            .collect();
        Dataset {
            scenario_id: "toy".into(),
            feature_dim: 4,
            n_beams: 3,
            samples,
            feature_norm: None,
            split: Split {
                train: (0..n - 10).collect(),
                val: (n - 10..n).collect(),
                test: vec![],
            },
        }
    }

    fn cfg(eps: f64, rounds: usize) -> AdvTrainConfig {
        AdvTrainConfig {
            attack: AttackSpec::new(AttackKind::Pgd, eps, 3),
            mix_ratio: 0.5,
            max_rounds: rounds,
            plateau_tol: 0.0,
            plateau_window: 3,
            from_scratch: false,
            batch_size: 7,
            seed: 21,
        }
    }

    fn model() -> MlpParams {
        MlpParams::init(4, &mlp_specs(2, 6, Normalization::BatchNorm, 0.1, 3), 1).unwrap()
    }

    #[test]
    fn zero_epsilon_rounds_equal_plain_epochs() {
        let ds = toy_dataset(60);
        let out = adversarial_train(model(), &ds, &cfg(0.0, 3), &mut RmsProp::new(0.01)).unwrap();
        let mut plain = model();
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 7,
            seed: 21,
        };
        train(&mut plain, &ds, &tc, &mut RmsProp::new(0.01)).unwrap();
        assert_eq!(out.params, plain);
        assert_eq!(out.history.len(), 3);
        for r in &out.history {
            assert_eq!(r.val_adv_mse, r.val_clean_mse);
        }
    }

    #[test]
    fn one_round_and_ball_containment() {
        let ds = toy_dataset(40);
        let out = adversarial_train(model(), &ds, &cfg(0.2, 1), &mut RmsProp::new(0.01)).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.stop, StopReason::MaxRounds);
        assert!(out.history[0].max_perturbation <= 0.2 + 1e-12);
    }

    #[test]
    fn batch_composition_rounding() {
        let c = cfg(0.1, 1);
        assert_eq!(c.adversarial_rows(100), 50);
        assert_eq!(c.adversarial_rows(7), 3);
        assert_eq!(c.adversarial_rows(1), 0);
    }

    #[test]
    fn plateau_window_arithmetic() {
        assert_eq!(plateau_run(&[1.0], 0.01), 0);
        assert_eq!(plateau_run(&[1.0, 0.5, 0.499, 0.4985], 0.01), 2);
        assert_eq!(plateau_run(&[1.0, 0.999, 0.5], 0.01), 0);
        let ds = toy_dataset(40);
        let mut c = cfg(0.1, 20);
        c.plateau_tol = 10.0;
        c.plateau_window = 2;
        let out = adversarial_train(model(), &ds, &c, &mut RmsProp::new(0.01)).unwrap();
        assert_eq!(out.stop, StopReason::Plateau);
        assert_eq!(out.history.len(), 3);
    }

    #[test]
    fn divergence_returns_last_finite_params() {
        let ds = toy_dataset(40);
        let out = adversarial_train(model(), &ds, &cfg(0.1, 3), &mut RmsProp::new(f64::INFINITY)).unwrap();
        assert_eq!(out.stop, StopReason::Diverged);
        assert!(out.params.is_finite());
        assert!(out.history.is_empty());
    }
}
