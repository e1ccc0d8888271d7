//! White-box L∞ input attacks (FGSM, MI-FGSM, PGD, iterated PGD with
//! restarts) and evaluation of a model under attack.
//!
//! Attacks work on normalized features, so ε is in z-score units. Each
//! sample is attacked through the gradient of its own loss (MSE against the
//! clean label vector), computed with the model in eval mode.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::beamcode::{optimal_beam, single_bs_effective_rate, Codebook, EffRateParams};
use crate::channel::ChannelTensor;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{mse_loss, per_row_mse, MlpParams, Mode};
use crate::rng::{derive_seed, SplitMix64};

/// Per-sample L1 gradient norms below this contribute nothing to the
/// MI-FGSM momentum.
pub const DEGENERATE_GRAD_NORM: f64 = 1e-20;

const RESTART_STREAM: u64 = 0x7265_7374;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    MiFgsm,
    Pgd,
    Ipgd,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [AttackKind::Fgsm, AttackKind::MiFgsm, AttackKind::Pgd, AttackKind::Ipgd];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::MiFgsm => "mi_fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Ipgd => "ipgd",
        }
    }

    pub fn is_iterative(self) -> bool {
        self != AttackKind::Fgsm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub epsilon: f64,
    /// `T` for the iterative kinds.
    pub iterations: usize,
    /// `α`; when absent, `ε/T` for MI-FGSM and `ε/4` for PGD and IPGD.
    pub step: Option<f64>,
    /// Momentum decay `μ` (MI-FGSM).
    pub decay: f64,
    /// Independent random starts (IPGD).
    pub restarts: usize,
    /// Uniform start inside the ε-ball (PGD, IPGD).
    pub random_start: bool,
    pub seed: u64,
}

impl AttackSpec {
    /// Spec with the crate defaults: `T = 10`, `μ = 1`, 4 restarts,
    /// random start on.
    pub fn new(kind: AttackKind, epsilon: f64, seed: u64) -> Self {
        Self {
            kind,
            epsilon,
            iterations: 10,
            step: None,
            decay: 1.0,
            restarts: 4,
            random_start: true,
            seed,
        }
    }

    pub fn step_size(&self) -> f64 {
        match (self.step, self.kind) {
            (Some(a), _) => a,
            (None, AttackKind::MiFgsm) => self.epsilon / self.iterations.max(1) as f64,
            (None, _) => self.epsilon / 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("attack epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.kind.is_iterative() {
            if self.iterations == 0 {
                return Err(Error::Config("iterative attacks need iterations >= 1".into()));
            }
            let a = self.step_size();
            if !(a.is_finite() && (a > 0.0 || (self.epsilon == 0.0 && a == 0.0))) {
                return Err(Error::Config(format!("attack step must be > 0, got {a}")));
            }
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::Config(format!("attack decay must be >= 0, got {}", self.decay)));
        }
        if self.kind == AttackKind::Ipgd && self.restarts == 0 {
            return Err(Error::Config("ipgd needs restarts >= 1".into()));
        }
        Ok(())
    }
}

/// `sign` with `sign(0) = 0`.
#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of each row's loss with respect to its input, eval mode.
pub fn input_gradient(model: &MlpParams, x: &Array2<f64>, z: &Array2<f64>) -> Result<Array2<f64>> {
    let (_, cache) = model.forward(x, Mode::Eval, 0)?;
    let g = model.per_row_input_grad(&cache, z)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input gradient".into()));
    }
    Ok(g)
}

fn check_inputs(model: &MlpParams, x: &Array2<f64>, z: &Array2<f64>) -> Result<()> {
    if x.nrows() != z.nrows() || z.ncols() != model.output_dim() {
        return Err(Error::Dimension(format!(
            "attack inputs {:?} and labels {:?} do not fit the model",
            x.dim(),
            z.dim()
        )));
    }
    Ok(())
}

/// Clamps `y` coordinatewise into `[x − ε, x + ε]`.
fn project(y: &mut Array2<f64>, x: &Array2<f64>, eps: f64) {
    Zip::from(y).and(x).for_each(|v, &c| *v = v.max(c - eps).min(c + eps));
}

/// `x + ε·sign(∇ℓ(x))`.
pub fn fgsm(model: &MlpParams, x: &Array2<f64>, z: &Array2<f64>, eps: f64) -> Result<Array2<f64>> {
    check_inputs(model, x, z)?;
    if eps == 0.0 {
        return Ok(x.clone());
    }
    let g = input_gradient(model, x, z)?;
    Ok(Zip::from(x).and(&g).map_collect(|&v, &d| v + eps * sign(d)))
}

/// Momentum iterative FGSM: `G ← μG + g/‖g‖₁` per sample,
/// `y ← y + α·sign(G)`, then a final projection onto the ε-ball.
pub fn mi_fgsm(
    model: &MlpParams,
    x: &Array2<f64>,
    z: &Array2<f64>,
    eps: f64,
    step: f64,
    iterations: usize,
    decay: f64,
) -> Result<Array2<f64>> {
    check_inputs(model, x, z)?;
    if eps == 0.0 {
        return Ok(x.clone());
    }
    let mut y = x.clone();
    let mut momentum = Array2::<f64>::zeros(x.raw_dim());
    for _ in 0..iterations {
        let g = input_gradient(model, &y, z)?;
        for ((mut m, gr), mut yr) in momentum.rows_mut().into_iter().zip(g.rows()).zip(y.rows_mut()) {
            let l1: f64 = gr.iter().map(|v| v.abs()).sum();
            if l1 < DEGENERATE_GRAD_NORM {
                m.mapv_inplace(|v| decay * v);
            } else {
                Zip::from(&mut m).and(&gr).for_each(|m, &d| *m = decay * *m + d / l1);
            }
            Zip::from(&mut yr).and(&m).for_each(|v, &m| *v += step * sign(m));
        }
    }
    project(&mut y, x, eps);
    Ok(y)
}

/// Projected gradient ascent. Row `i`'s random start is drawn from the
/// stream `derive_seed(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn pgd(
    model: &MlpParams,
    x: &Array2<f64>,
    z: &Array2<f64>,
    eps: f64,
    step: f64,
    iterations: usize,
    random_start: bool,
    seed: u64,
) -> Result<Array2<f64>> {
    check_inputs(model, x, z)?;
    if eps == 0.0 {
        return Ok(x.clone());
    }
    let mut y = x.clone();
    if random_start {
        for (i, mut row) in y.rows_mut().into_iter().enumerate() {
            let mut rng = SplitMix64::new(derive_seed(seed, i as u64));
            row.iter_mut().for_each(|v| *v += rng.uniform(-eps, eps));
        }
    }
    for _ in 0..iterations {
        let g = input_gradient(model, &y, z)?;
        Zip::from(&mut y).and(&g).for_each(|v, &d| *v += step * sign(d));
        project(&mut y, x, eps);
    }
    Ok(y)
}

/// PGD from several random starts, keeping for each sample the candidate
/// with the highest loss (earliest restart on ties). Restart 0 uses `seed`
/// itself, so one restart reproduces [`pgd`].
#[allow(clippy::too_many_arguments)]
pub fn ipgd(
    model: &MlpParams,
    x: &Array2<f64>,
    z: &Array2<f64>,
    eps: f64,
    step: f64,
    iterations: usize,
    restarts: usize,
    random_start: bool,
    seed: u64,
) -> Result<Array2<f64>> {
    if restarts == 0 {
        return Err(Error::Config("ipgd needs restarts >= 1".into()));
    }
    check_inputs(model, x, z)?;
    if eps == 0.0 {
        return Ok(x.clone());
    }
    let mut best = pgd(model, x, z, eps, step, iterations, random_start, seed)?;
    let mut best_loss = per_row_mse(&model.predict(&best)?, z)?;
    for r in 1..restarts {
        let s = derive_seed(derive_seed(seed, RESTART_STREAM), r as u64);
        let cand = pgd(model, x, z, eps, step, iterations, random_start, s)?;
        let loss = per_row_mse(&model.predict(&cand)?, z)?;
        for (i, (&l, b)) in loss.iter().zip(best_loss.iter_mut()).enumerate() {
            if l > *b {
                *b = l;
                best.row_mut(i).assign(&cand.row(i));
            }
        }
    }
    Ok(best)
}

/// Dispatches on `spec.kind`.
pub fn run_attack(model: &MlpParams, x: &Array2<f64>, z: &Array2<f64>, spec: &AttackSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let a = spec.step_size();
    match spec.kind {
        AttackKind::Fgsm => fgsm(model, x, z, spec.epsilon),
        AttackKind::MiFgsm => mi_fgsm(model, x, z, spec.epsilon, a, spec.iterations, spec.decay),
        AttackKind::Pgd => pgd(model, x, z, spec.epsilon, a, spec.iterations, spec.random_start, spec.seed),
        AttackKind::Ipgd => ipgd(
            model,
            x,
            z,
            spec.epsilon,
            a,
            spec.iterations,
            spec.restarts,
            spec.random_start,
            spec.seed,
        ),
    }
}

/// What evaluation needs besides the model: the channels the samples came
/// from, the codebook and the effective-rate time constants.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub channel: &'a ChannelTensor,
    pub codebook: &'a Codebook,
    pub eff: EffRateParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mse: f64,
    pub top1_acc: f64,
    /// Mean effective achievable rate, bits/s/Hz.
    pub ear_mean: f64,
    pub n_samples: usize,
}

/// Effective achievable rate of each sample's serving BS transmitting on
/// `beams[i]` alone (`v = 1`).
pub fn sample_rates(dataset: &Dataset, indices: &[usize], beams: &[usize], ctx: &EvalContext) -> Result<Vec<f64>> {
    indices
        .iter()
        .zip(beams)
        .map(|(&i, &b)| {
            let s = &dataset.samples[i];
            single_bs_effective_rate(&ctx.eff, ctx.channel.link(s.user_id, s.bs_id), ctx.codebook.beam(b))
        })
        .collect()
}

/// MSE, top-1 beam accuracy and mean effective rate of the model on the
/// given (possibly perturbed) features of `indices`.
pub fn evaluate_features(
    model: &MlpParams,
    x: &Array2<f64>,
    dataset: &Dataset,
    indices: &[usize],
    ctx: &EvalContext,
) -> Result<EvalMetrics> {
    if indices.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let z = dataset.labels(indices);
    let pred = model.predict(x)?;
    let mse = mse_loss(&pred, &z)?;
    let beams = pred
        .rows()
        .into_iter()
        .map(|r| optimal_beam(r.as_slice().expect("standard layout")))
        .collect::<Result<Vec<_>>>()?;
    let hits = indices
        .iter()
        .zip(&beams)
        .filter(|(&i, &b)| dataset.samples[i].label_beam == b)
        .count();
    let rates = sample_rates(dataset, indices, &beams, ctx)?;
    Ok(EvalMetrics {
        mse,
        top1_acc: hits as f64 / indices.len() as f64,
        ear_mean: rates.iter().sum::<f64>() / rates.len() as f64,
        n_samples: indices.len(),
    })
}

/// Clean evaluation on a set of sample indices.
pub fn evaluate_clean(model: &MlpParams, dataset: &Dataset, indices: &[usize], ctx: &EvalContext) -> Result<EvalMetrics> {
    evaluate_features(model, &dataset.features(indices), dataset, indices, ctx)
}

/// Attacks every sample of `indices` with `spec` and evaluates the model on
/// the perturbed features. The label-optimal beams give the upper bound on
/// the returned rate.
pub fn evaluate_under_attack(
    model: &MlpParams,
    dataset: &Dataset,
    indices: &[usize],
    spec: &AttackSpec,
    ctx: &EvalContext,
) -> Result<EvalMetrics> {
    let x = dataset.features(indices);
    let z = dataset.labels(indices);
    let adv = run_attack(model, &x, &z, spec)?;
    evaluate_features(model, &adv, dataset, indices, ctx)
}

/// Mean effective rate when every sample uses its label-optimal beam.
pub fn oracle_ear(dataset: &Dataset, indices: &[usize], ctx: &EvalContext) -> Result<f64> {
    let beams: Vec<usize> = indices.iter().map(|&i| dataset.samples[i].label_beam).collect();
    let rates = sample_rates(dataset, indices, &beams, ctx)?;
    Ok(rates.iter().sum::<f64>() / rates.len().max(1) as f64)
}


#[cfg(test)]
mod proptests {
    use proptest::prelude::*;

    use super::*;
    use crate::nn::{mlp_specs, Normalization};

    fn kind() -> impl Strategy<Value = AttackKind> {
        prop::sample::select(AttackKind::ALL.to_vec())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn stays_in_the_ball_and_is_deterministic(
            kind in kind(),
            eps in 0.0f64..2.0,
            seed in any::<u64>(),
            iterations in 1usize..6,
        ) {
            let model = MlpParams::init(5, &mlp_specs(1, 8, Normalization::LayerNorm, 0.0, 3), seed).unwrap();
            let mut rng = SplitMix64::new(seed ^ 1);
            let x = Array2::from_shape_simple_fn((16, 5), || rng.standard_normal());
            let z = Array2::from_shape_simple_fn((16, 3), || rng.next_f64());
            let mut spec = AttackSpec::new(kind, eps, seed);
            spec.iterations = iterations;
            spec.restarts = 2;
            let a = run_attack(&model, &x, &z, &spec).unwrap();
            let dev = (&a - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(dev <= eps + 1e-12, "{kind:?}: {dev} > {eps}");
            prop_assert_eq!(a, run_attack(&model, &x, &z, &spec).unwrap());
        }
    }
}
