//! Qualitative checks on the standard preset and seed: one non-private
//! model is trained once and shared.

use std::sync::OnceLock;

use ndarray::{s, Array2};

use super::config::{Case, RunConfig};
use super::pipeline::{defend_model, train_model, TrainedModel, Workspace};
use super::presets::{preset, DEFAULT_PRESET};
use crate::attacks::{evaluate_under_attack, fgsm, oracle_ear, pgd, run_attack, AttackKind};
use crate::dataset::SplitPart;
use crate::nn::{mse_of, per_row_mse};

struct Desk {
    cfg: RunConfig,
    ws: Workspace,
    model: TrainedModel,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let cfg = preset(DEFAULT_PRESET).unwrap();
        let ws = Workspace::build(&cfg).unwrap();
        let model = train_model(&cfg, &ws.dataset, Case::C1, None).unwrap();
        Desk { cfg, ws, model }
    })
}

fn part(d: &Desk, p: SplitPart) -> (Array2<f64>, Array2<f64>) {
    let idx = d.ws.dataset.indices(p);
    (d.ws.dataset.features(idx), d.ws.dataset.labels(idx))
}

#[test]
fn training_lowers_train_mse() {
    let d = desk();
    let n = d.ws.dataset.samples.len();
    assert!((2000..=5000).contains(&n));
    let specs = d.cfg.model.specs(d.ws.dataset.feature_dim, d.ws.dataset.n_beams, Case::C1);
    let init = crate::nn::MlpParams::init(d.ws.dataset.feature_dim, &specs, d.cfg.seed).unwrap();
    let (x, y) = part(d, SplitPart::Train);
    let before = mse_of(&init, &x, &y).unwrap();
    let after = d.model.history.last().unwrap().train_mse;
    assert!(after < before, "train MSE {before} -> {after}");
}

#[test]
fn fgsm_raises_test_mse() {
    let d = desk();
    let (x, y) = part(d, SplitPart::Test);
    let clean = mse_of(&d.model.params, &x, &y).unwrap();
    let adv = fgsm(&d.model.params, &x, &y, 0.1).unwrap();
    assert!(mse_of(&d.model.params, &adv, &y).unwrap() > clean);
}

#[test]
fn tiny_fgsm_step_ascends_the_loss() {
    let d = desk();
    let (x, y) = part(d, SplitPart::Test);
    let p = &d.model.params;
    let grad = crate::attacks::input_gradient(p, &x, &y).unwrap();
    let before = per_row_mse(&p.predict(&x).unwrap(), &y).unwrap();
    let after = per_row_mse(&p.predict(&fgsm(p, &x, &y, 1e-4).unwrap()).unwrap(), &y).unwrap();
    let (mut eligible, mut ascended) = (0, 0);
    for (i, g) in grad.rows().into_iter().enumerate() {
        if g.dot(&g).sqrt() > 1e-6 {
            eligible += 1;
            ascended += usize::from(after[i] >= before[i]);
        }
    }
    assert!(eligible > 0);
    assert!(ascended as f64 >= 0.95 * eligible as f64, "{ascended}/{eligible}");
}

#[test]
fn pgd_dominates_fgsm_on_most_batches() {
    let d = desk();
    let (x, y) = part(d, SplitPart::Train);
    let p = &d.model.params;
    let eps = 0.1;
    let (mut wins, mut total) = (0, 0);
    for start in (0..x.nrows().min(2000)).step_by(100) {
        let xb = x.slice(s![start..start + 100, ..]).to_owned();
        let yb = y.slice(s![start..start + 100, ..]).to_owned();
        let f = mse_of(p, &fgsm(p, &xb, &yb, eps).unwrap(), &yb).unwrap();
        let g = mse_of(p, &pgd(p, &xb, &yb, eps, eps / 4.0, 10, true, start as u64).unwrap(), &yb).unwrap();
        wins += usize::from(g >= f);
        total += 1;
    }
    assert!(wins as f64 >= 0.6 * total as f64, "PGD won {wins}/{total}");
}

#[test]
fn attacked_ear_never_beats_the_label_oracle() {
    let d = desk();
    let idx = d.ws.dataset.indices(SplitPart::Test);
    let ctx = d.ws.eval_context(&d.cfg);
    let bound = oracle_ear(&d.ws.dataset, idx, &ctx).unwrap();
    for kind in AttackKind::ALL {
        let spec = d.cfg.attack.spec(kind, 0.1, 3);
        let m = evaluate_under_attack(&d.model.params, &d.ws.dataset, idx, &spec, &ctx).unwrap();
        assert!(m.ear_mean <= bound + 1e-12, "{kind:?}: {} > {bound}", m.ear_mean);
    }
}

#[test]
fn adversarial_training_changes_params_and_lowers_adversarial_val_mse() {
    let d = desk();
    let mut cfg = d.cfg.clone();
    cfg.defense.attack = AttackKind::Fgsm;
    cfg.defense.epsilon = 0.1;
    cfg.defense.max_rounds = 5;
    cfg.defense.plateau_tol = 0.0;
    let defended = defend_model(&cfg, &d.ws.dataset, &d.model).unwrap();
    assert_eq!(defended.history.len(), 5);
    assert_ne!(defended.params.content_hash(), d.model.params.content_hash());
    let (x, y) = part(d, SplitPart::Val);
    let spec = cfg.attack.spec(AttackKind::Fgsm, 0.1, 0);
    let adv_mse = |p| mse_of(p, &run_attack(p, &x, &y, &spec).unwrap(), &y).unwrap();
    let before = adv_mse(&d.model.params);
    let after = adv_mse(&defended.params);
    assert!(after < before, "adversarial val MSE {before} -> {after}");
}

#[test]
fn private_clean_mse_improves_with_looser_budget() {
    let d = desk();
    let (x, y) = part(d, SplitPart::Test);
    let mut points: Vec<(f64, f64)> = [0.5, 1.0, 2.0]
        .iter()
        .map(|&sigma| {
            let m = train_model(&d.cfg, &d.ws.dataset, Case::C2, Some(sigma)).unwrap();
            (m.meta.dp_epsilon.unwrap(), mse_of(&m.params, &x, &y).unwrap())
        })
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut inversions = 0;
    for w in points.windows(2) {
        if w[1].1 > w[0].1 {
            inversions += 1;
            assert!((w[1].1 - w[0].1) / w[0].1 <= 0.05, "{points:?}");
        }
    }
    assert!(inversions <= 1, "{points:?}");
}
