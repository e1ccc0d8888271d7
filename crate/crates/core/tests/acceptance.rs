//! Acceptance suite. Runs the ten release criteria at their stated
//! tolerances, prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails.
//!
//! Oracles here are written independently of the library: brute-force
//! sums, finite differences, singleton batches and closed forms.

use std::process::ExitCode;
use std::time::Instant;

use beamsec_core::attacks::{fgsm, ipgd, mi_fgsm, pgd, run_attack, AttackKind, AttackSpec};
use beamsec_core::beamcode::{
    beam_rates, build_dft_codebook, effective_rate, matched_beam, optimal_beam, Codebook, EffRateParams,
};
use beamsec_core::channel::{steering_vector, BlockDiagonalRf, TransmitConfig};
use beamsec_core::dataset::SplitPart;
use beamsec_core::harness::pipeline::{self, Workspace};
use beamsec_core::harness::presets::{preset, DEFAULT_PRESET};
use beamsec_core::harness::{Case, RunConfig};
use beamsec_core::nn::{mlp_specs, mse_loss, mse_of, Grads, MlpParams, Mode, Normalization, Optimizer, Sgd};
use beamsec_core::privacy::{account_privacy, clip_factor, per_example_gradients, DpConfig, DpSgd};
use beamsec_core::rng::{derive_seed, SplitMix64};
use ndarray::{s, Array2};
use num_complex::Complex64;

type Outcome = Result<(bool, String), String>;

fn random_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.standard_normal())
}

fn random_vec(n: usize, rng: &mut SplitMix64) -> Vec<Complex64> {
    (0..n).map(|_| rng.complex_normal(1.0)).collect()
}

fn unit(mut v: Vec<Complex64>) -> Vec<Complex64> {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= n);
    v
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

// 1 ---------------------------------------------------------------------

fn loss_at(p: &MlpParams, x: &Array2<f64>, y: &Array2<f64>, mode: Mode, seed: u64) -> f64 {
    mse_loss(&p.forward(x, mode, seed).unwrap().0, y).unwrap()
}

/// Relative error with magnitudes floored at 1e-4, where the central
/// difference itself is only good to ~1e-11 absolute.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

fn max_fd_error(p: &MlpParams, x: &Array2<f64>, y: &Array2<f64>, mode: Mode) -> f64 {
    let h = 1e-5;
    let seed = 31;
    let (_, cache) = p.forward(x, mode, seed).unwrap();
    let (grads, dx) = p.backward(&cache, y).unwrap();
    let analytic = grads.flatten();
    let mut worst: f64 = 0.0;
    let mut k = 0;
    let lens: Vec<usize> = p.clone().tensors_mut().iter().map(|t| t.len()).collect();
    for (t, &len) in lens.iter().enumerate() {
        for i in 0..len {
            let mut plus = p.clone();
            plus.tensors_mut()[t][i] += h;
            let mut minus = p.clone();
            minus.tensors_mut()[t][i] -= h;
            let num = (loss_at(&plus, x, y, mode, seed) - loss_at(&minus, x, y, mode, seed)) / (2.0 * h);
            worst = worst.max(rel_err(analytic[k], num));
            k += 1;
        }
    }
    assert_eq!(k, analytic.len());
    for idx in ndarray::indices(x.dim()) {
        let mut plus = x.clone();
        plus[idx] += h;
        let mut minus = x.clone();
        minus[idx] -= h;
        let num = (loss_at(p, &plus, y, mode, seed) - loss_at(p, &minus, y, mode, seed)) / (2.0 * h);
        worst = worst.max(rel_err(dx[idx], num));
    }
    worst
}

fn gradient_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = SplitMix64::new(1);
    let x = random_matrix(8, 6, &mut rng);
    let y = random_matrix(8, 5, &mut rng);
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for (norm, dropout) in [
        (Normalization::None, 0.0),
        (Normalization::BatchNorm, 0.1),
        (Normalization::LayerNorm, 0.1),
    ] {
        let mut p = MlpParams::init(6, &mlp_specs(2, 16, norm, dropout, 5), 2).map_err(e)?;
        for l in &mut p.layers {
            l.b.mapv_inplace(|_| 0.1 * rng.standard_normal());
            if let Some(g) = &mut l.gamma {
                g.mapv_inplace(|_| 1.0 + 0.2 * rng.standard_normal());
            }
            if let Some(b) = &mut l.beta {
                b.mapv_inplace(|_| 0.1 * rng.standard_normal());
            }
        }
        params = params.max(p.num_params());
        for mode in [Mode::Train, Mode::Eval] {
            worst = worst.max(max_fd_error(&p, &x, &y, mode));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-5 && params <= 1000 && secs < 10.0,
        format!("max rel err {worst:.2e}, {params} params, {secs:.2} s"),
    ))
}

// 2 ---------------------------------------------------------------------

/// `(1/K)·Σ_k log2(1 + SNR·|Σ_a h[k,a]·f[a]|²)` by direct summation.
fn brute_rate(slice: &[Complex64], f: &[Complex64], snr: f64) -> f64 {
    let a_total = f.len();
    let k_total = slice.len() / a_total;
    let mut acc = 0.0;
    for k in 0..k_total {
        let mut g = Complex64::new(0.0, 0.0);
        for a in 0..a_total {
            g += slice[k * a_total + a] * f[a];
        }
        acc += (1.0 + snr * g.norm_sqr()).log2();
    }
    acc / k_total as f64
}

/// Effective rate through the dense `XA × X` RF matrix applied to the
/// stacked `XA` channel of each subcarrier.
fn brute_effective(
    params: &EffRateParams,
    channel: &[Vec<Complex64>],
    beams: &[Vec<Complex64>],
    precoders: &[Vec<Complex64>],
) -> f64 {
    let x_total = channel.len();
    let a_total = beams[0].len();
    let k_total = channel[0].len() / a_total;
    let mut rf = vec![vec![Complex64::new(0.0, 0.0); x_total]; x_total * a_total];
    for x in 0..x_total {
        for a in 0..a_total {
            rf[x * a_total + a][x] = beams[x][a];
        }
    }
    let mut sum = 0.0;
    for k in 0..k_total {
        let h: Vec<Complex64> = (0..x_total * a_total)
            .map(|i| channel[i / a_total][k * a_total + i % a_total])
            .collect();
        let mut g = Complex64::new(0.0, 0.0);
        for (i, hi) in h.iter().enumerate() {
            for (x, v) in precoders[k].iter().enumerate() {
                g += hi * rf[i][x] * v;
            }
        }
        sum += (1.0 + params.snr_linear * g.norm_sqr()).log2();
    }
    (1.0 - params.t_train / params.t_beam_coherence) * sum
}

fn rate_oracles() -> Outcome {
    let mut rng = SplitMix64::new(2);
    let mut worst_rate: f64 = 0.0;
    let mut worst_ear: f64 = 0.0;
    for _ in 0..100 {
        let a_total = 2 + rng.below(7);
        let k_total = 1 + rng.below(6);
        let n_beams = a_total + rng.below(2 * a_total);
        let snr = 10f64.powf(rng.uniform(-1.0, 2.0));
        let vectors: Vec<Complex64> = (0..n_beams).flat_map(|_| unit(random_vec(a_total, &mut rng))).collect();
        let codebook = Codebook {
            num_antennas: a_total,
            n_beams,
            vectors,
            omni: vec![Complex64::new(1.0 / (a_total as f64).sqrt(), 0.0); a_total],
        };
        let slice = random_vec(k_total * a_total, &mut rng);
        let rates = beam_rates(&slice, &codebook, snr).map_err(e)?;
        for (p, r) in rates.iter().enumerate() {
            worst_rate = worst_rate.max((r - brute_rate(&slice, codebook.beam(p), snr)).abs());
        }

        let x_total = 1 + rng.below(3);
        let channel: Vec<Vec<Complex64>> = (0..x_total).map(|_| random_vec(k_total * a_total, &mut rng)).collect();
        let beams: Vec<Vec<Complex64>> = (0..x_total).map(|_| unit(random_vec(a_total, &mut rng))).collect();
        let precoders: Vec<Vec<Complex64>> = (0..k_total).map(|_| unit(random_vec(x_total, &mut rng))).collect();
        let t_beam = rng.uniform(1e-3, 20e-3);
        let params = EffRateParams {
            t_train: rng.uniform(0.0, t_beam),
            t_beam_coherence: t_beam,
            t_channel_coherence: 1e-3,
            snr_linear: snr,
        };
        let tx = TransmitConfig {
            pilot: vec![Complex64::new(1.0, 0.0); k_total],
            precoders: precoders.clone(),
            rf_layout: BlockDiagonalRf {
                num_bs: x_total,
                num_antennas: a_total,
            },
        };
        let ch: Vec<&[Complex64]> = channel.iter().map(|c| c.as_slice()).collect();
        let bm: Vec<&[Complex64]> = beams.iter().map(|b| b.as_slice()).collect();
        let got = effective_rate(&params, &ch, &bm, &tx).map_err(e)?;
        worst_ear = worst_ear.max((got - brute_effective(&params, &channel, &beams, &precoders)).abs());
    }

    // Single-path channels at codebook grid angles.
    let (a_total, n_beams, spacing) = (32, 512, 0.5);
    let codebook = build_dft_codebook(a_total, n_beams).map_err(e)?;
    let mut matched = 0;
    for i in 0..32 {
        let p = 16 * i + 3;
        // -s·sinθ ≡ p/N (mod 1), folded into sinθ ∈ (-1, 1).
        let signed = if p > n_beams / 2 { p as f64 - n_beams as f64 } else { p as f64 };
        let aod = (-signed / (n_beams as f64 * spacing)).asin();
        let sv = steering_vector(a_total, spacing, aod);
        let mut slice = Vec::new();
        for _ in 0..4 {
            let g = rng.complex_normal(1.0);
            slice.extend(sv.iter().map(|v| g * v));
        }
        let rates = beam_rates(&slice, &codebook, 1.0).map_err(e)?;
        if optimal_beam(&rates).map_err(e)? == p && matched_beam(aod, spacing, n_beams) == p {
            matched += 1;
        }
    }
    Ok((
        worst_rate <= 1e-9 && worst_ear <= 1e-9 && matched == 32,
        format!("rate err {worst_rate:.1e}, EAR err {worst_ear:.1e}, matched beams {matched}/32"),
    ))
}

// 3 ---------------------------------------------------------------------

fn attack_invariants() -> Outcome {
    let mut rng = SplitMix64::new(3);
    let model = MlpParams::init(12, &mlp_specs(2, 24, Normalization::BatchNorm, 0.05, 8), 4).map_err(e)?;
    let x = random_matrix(1000, 12, &mut rng);
    let z = random_matrix(1000, 8, &mut rng).mapv(f64::abs);
    let eps = 0.1;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut identity = true;
    for kind in AttackKind::ALL {
        let adv = run_attack(&model, &x, &z, &AttackSpec::new(kind, eps, 5)).map_err(e)?;
        let dev = (&adv - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst_excess = worst_excess.max(dev - eps);
        identity &= run_attack(&model, &x, &z, &AttackSpec::new(kind, 0.0, 5)).map_err(e)? == x;
    }
    let base = fgsm(&model, &x, &z, eps).map_err(e)?;
    let mi = mi_fgsm(&model, &x, &z, eps, eps, 1, 0.0).map_err(e)?;
    let pg = pgd(&model, &x, &z, eps, eps, 1, false, 6).map_err(e)?;
    let pg_rand = pgd(&model, &x, &z, eps, eps / 4.0, 10, true, 7).map_err(e)?;
    let ip = ipgd(&model, &x, &z, eps, eps / 4.0, 10, 1, true, 7).map_err(e)?;
    let reductions = [mi == base, pg == base, ip == pg_rand];
    Ok((
        worst_excess <= 1e-12 && identity && reductions.iter().all(|&b| b),
        format!(
            "max ‖δ‖∞ − ε = {worst_excess:.1e}, ε=0 identity {identity}, \
             MI-FGSM→FGSM {}, PGD→FGSM {}, IPGD→PGD {}",
            reductions[0], reductions[1], reductions[2]
        ),
    ))
}

// 6 ---------------------------------------------------------------------

fn dp_correctness() -> Outcome {
    let mut rng = SplitMix64::new(6);
    let specs = mlp_specs(2, 10, Normalization::LayerNorm, 0.0, 4);
    let init = MlpParams::init(5, &specs, 8).map_err(e)?;
    let cfg = |sigma: f64, clip: f64| DpConfig {
        clip_norm: clip,
        noise_multiplier: sigma,
        delta: 1e-5,
        learning_rate: 0.05,
        batch_size: 16,
        epochs: 1,
        seed: 0,
    };
    // σ = 0 and a bound no gradient reaches: DP-SGD is plain SGD.
    let mut a = init.clone();
    let mut b = init.clone();
    let mut dp = DpSgd::new(cfg(0.0, 1e6)).map_err(e)?;
    let mut sgd = Sgd { learning_rate: 0.05 };
    let mut traj_err: f64 = 0.0;
    for step in 0..40 {
        let x = random_matrix(16, 5, &mut rng);
        let y = random_matrix(16, 4, &mut rng);
        dp.step(&mut a, &x, &y, step).map_err(e)?;
        sgd.step(&mut b, &x, &y, step).map_err(e)?;
        for (p, q) in a.all_tensors().iter().zip(b.all_tensors()) {
            for (u, v) in p.iter().zip(q) {
                traj_err = traj_err.max((u - v).abs());
            }
        }
    }

    // Per-example gradients against singleton batches, dropout active.
    let drop = MlpParams::init(5, &mlp_specs(2, 10, Normalization::LayerNorm, 0.2, 4), 9).map_err(e)?;
    let x = random_matrix(12, 5, &mut rng);
    let y = random_matrix(12, 4, &mut rng);
    let per = per_example_gradients(&drop, &x, &y, Mode::Train, 17).map_err(e)?;
    let mut single_err: f64 = 0.0;
    for (i, g) in per.iter().enumerate() {
        let xi = x.slice(s![i..i + 1, ..]).to_owned();
        let yi = y.slice(s![i..i + 1, ..]).to_owned();
        let (_, c) = drop.forward_rows(&xi, Mode::Train, &[derive_seed(17, i as u64)]).map_err(e)?;
        let (one, _) = drop.backward(&c, &yi).map_err(e)?;
        for (u, v) in g.flatten().iter().zip(one.flatten()) {
            single_err = single_err.max((u - v).abs());
        }
    }

    // Clipped norms on audited batches, small bound so clipping binds.
    let clip = 0.05;
    let mut audited: f64 = 0.0;
    let mut opt = DpSgd::new(cfg(1.0, clip)).map_err(e)?;
    let mut p = init.clone();
    for step in 0..20 {
        let x = random_matrix(16, 5, &mut rng) * 3.0;
        let y = random_matrix(16, 4, &mut rng);
        for g in per_example_gradients(&p, &x, &y, Mode::Train, step).map_err(e)? {
            let n = g.norm_sqr().sqrt();
            let mut c: Grads = g.clone();
            c.scale(clip_factor(n, clip));
            audited = audited.max(c.norm_sqr().sqrt());
        }
        opt.step(&mut p, &x, &y, step).map_err(e)?;
    }
    let bound = clip + 1e-12;
    Ok((
        traj_err <= 1e-9 && single_err <= 1e-10 && audited <= bound && opt.max_clipped_norm <= bound,
        format!(
            "SGD trajectory err {traj_err:.1e}, singleton err {single_err:.1e}, \
             max clipped norm {:.6} (C = {clip})",
            audited.max(opt.max_clipped_norm)
        ),
    ))
}

// 7 ---------------------------------------------------------------------

fn accountant() -> Outcome {
    // Full batch: RDP(λ) = λ/(2σ²), ε* = min_λ RDP(λ) + ln(1/δ)/(λ−1).
    let (sigma, delta) = (1.0f64, 1e-5f64);
    let closed = (2..=64u32)
        .map(|l| l as f64 / (2.0 * sigma * sigma) + (1.0 / delta).ln() / (l as f64 - 1.0))
        .fold(f64::INFINITY, f64::min);
    let got = account_privacy(1.0, sigma, 1, delta).map_err(e)?;
    let closed_err = (got - closed).abs();

    let steps = [1u64, 10, 100, 1000];
    let sigmas = [0.5, 1.0, 2.0, 4.0];
    let qs = [0.01, 0.05, 0.2, 1.0];
    let mut grid = vec![0.0; 64];
    let at = |i: usize, j: usize, k: usize| i * 16 + j * 4 + k;
    for (i, &t) in steps.iter().enumerate() {
        for (j, &s) in sigmas.iter().enumerate() {
            for (k, &q) in qs.iter().enumerate() {
                grid[at(i, j, k)] = account_privacy(q, s, t, delta).map_err(e)?;
            }
        }
    }
    let mut violations = 0;
    for a in 0..4 {
        for b in 0..4 {
            for c in 1..4 {
                violations += usize::from(grid[at(c, a, b)] < grid[at(c - 1, a, b)]);
                violations += usize::from(grid[at(a, c, b)] > grid[at(a, c - 1, b)]);
                violations += usize::from(grid[at(a, b, c)] < grid[at(a, b, c - 1)]);
            }
        }
    }
    Ok((
        closed_err <= 1e-9 && violations == 0,
        format!("q=1 ε* {got:.9} vs closed form {closed:.9}, {violations} monotonicity violations"),
    ))
}

// 4, 5, 9: the standard preset ------------------------------------------

struct Standard {
    cfg: RunConfig,
    ws: Workspace,
    trained: pipeline::TrainedModel,
    train_secs: f64,
}

fn standard() -> Result<Standard, String> {
    let cfg = preset(DEFAULT_PRESET).map_err(e)?;
    let t = Instant::now();
    let ws = Workspace::build(&cfg).map_err(e)?;
    let trained = pipeline::train_model(&cfg, &ws.dataset, Case::C1, None).map_err(e)?;
    Ok(Standard {
        cfg,
        ws,
        trained,
        train_secs: t.elapsed().as_secs_f64(),
    })
}

fn split_xy(ws: &Workspace, part: SplitPart) -> (Vec<usize>, Array2<f64>, Array2<f64>) {
    let idx = ws.dataset.indices(part).to_vec();
    let x = ws.dataset.features(&idx);
    let y = ws.dataset.labels(&idx);
    (idx, x, y)
}

fn attack_efficacy(st: &Standard) -> Outcome {
    let t = Instant::now();
    let (idx, x, y) = split_xy(&st.ws, SplitPart::Test);
    let clean = mse_of(&st.trained.params, &x, &y).map_err(e)?;
    let adv = fgsm(&st.trained.params, &x, &y, 0.1).map_err(e)?;
    let attacked = mse_of(&st.trained.params, &adv, &y).map_err(e)?;
    let secs = st.train_secs + t.elapsed().as_secs_f64();
    let ratio = attacked / clean;
    Ok((
        ratio >= 1.5 && secs < 300.0 && st.ws.dataset.samples.len() >= 2000,
        format!(
            "{} samples, test MSE clean {clean:.6} → FGSM ε=0.1 {attacked:.6} (×{ratio:.3}, need ≥ 1.5), {secs:.1} s",
            st.ws.dataset.samples.len()
        ) + if idx.is_empty() { " (empty test split)" } else { "" },
    ))
}

fn defense_efficacy(st: &Standard) -> Outcome {
    let mut cfg = st.cfg.clone();
    cfg.defense.attack = AttackKind::Pgd;
    cfg.defense.max_rounds = cfg.defense.max_rounds.max(5);
    // Force every round to run.
    cfg.defense.plateau_tol = 0.0;
    let t = Instant::now();
    let defended = pipeline::defend_model(&cfg, &st.ws.dataset, &st.trained).map_err(e)?;
    let (_, x, y) = split_xy(&st.ws, SplitPart::Val);
    let eps = cfg.defense.epsilon;
    let spec = cfg.attack.spec(AttackKind::Pgd, eps, 55);
    let adv_mse = |p: &MlpParams| -> Result<f64, String> {
        let adv = run_attack(p, &x, &y, &spec).map_err(e)?;
        mse_of(p, &adv, &y).map_err(e)
    };
    let before_adv = adv_mse(&st.trained.params)?;
    let after_adv = adv_mse(&defended.params)?;
    let before_clean = mse_of(&st.trained.params, &x, &y).map_err(e)?;
    let after_clean = mse_of(&defended.params, &x, &y).map_err(e)?;
    let rounds = defended.history.len();
    let (adv_ratio, clean_ratio) = (after_adv / before_adv, after_clean / before_clean);
    Ok((
        rounds >= 5 && adv_ratio <= 0.7 && clean_ratio <= 2.0,
        format!(
            "{rounds} PGD rounds, val adversarial MSE {before_adv:.6} → {after_adv:.6} (×{adv_ratio:.3}, need ≤ 0.7), \
             clean {before_clean:.6} → {after_clean:.6} (×{clean_ratio:.3}, need ≤ 2), {:.1} s",
            t.elapsed().as_secs_f64()
        ),
    ))
}

fn learning_sanity(st: &Standard) -> Outcome {
    let (idx, x, _) = split_xy(&st.ws, SplitPart::Test);
    let pred = st.trained.params.predict(&x).map_err(e)?;
    let mut hits = 0;
    for (row, &i) in pred.rows().into_iter().zip(&idx) {
        // Argmax with lowest index on ties, written out here.
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        hits += usize::from(best == st.ws.dataset.samples[i].label_beam);
    }
    let acc = hits as f64 / idx.len() as f64;
    let need = 10.0 / st.ws.dataset.n_beams as f64;
    Ok((
        acc >= need,
        format!("test top-1 {acc:.4} ({hits}/{}), need ≥ {need:.4}", idx.len()),
    ))
}

// 8 ---------------------------------------------------------------------

fn privacy_utility(st: &Standard) -> Outcome {
    let t = Instant::now();
    let mut mses = Vec::new();
    let mut eps = Vec::new();
    for sigma in [0.5, 1.0, 2.0] {
        let m = pipeline::train_model(&st.cfg, &st.ws.dataset, Case::C2, Some(sigma)).map_err(e)?;
        let last = m.history.last().ok_or("no epochs")?;
        mses.push(last.val_mse.ok_or("no validation split")?);
        eps.push(m.meta.dp_epsilon_or_inf());
    }
    let mut inversions = 0;
    let mut large = false;
    for w in mses.windows(2) {
        if w[1] < w[0] {
            inversions += 1;
            large |= (w[0] - w[1]) / w[0] > 0.05;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((
        inversions <= 1 && !large && secs < 600.0,
        format!(
            "σ 0.5/1/2: val MSE {:.6}/{:.6}/{:.6}, ε* {:.2}/{:.2}/{:.2}, {inversions} inversions, {secs:.1} s",
            mses[0], mses[1], mses[2], eps[0], eps[1], eps[2]
        ),
    ))
}

// 10 --------------------------------------------------------------------

fn small_tradeoff_config() -> Result<RunConfig, String> {
    let mut cfg = preset(DEFAULT_PRESET).map_err(e)?;
    let g = &mut cfg.scenario.user_grid;
    g.rows = 20;
    g.cols = 20;
    cfg.scenario.num_users = 400;
    cfg.model.epochs = 2;
    cfg.defense.max_rounds = 1;
    cfg.defense.iterations = 3;
    cfg.attack.epsilon = vec![0.05, 0.1];
    cfg.tradeoff.noise_multipliers = vec![0.5, 2.0];
    let mut p = cfg.privacy.ok_or("preset without privacy section")?;
    p.epochs = 2;
    cfg.privacy = Some(p);
    Ok(cfg)
}

fn determinism() -> Outcome {
    let cfg = small_tradeoff_config()?;
    let mut files = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(e)?;
        let rows = pipeline::tradeoff_to(&cfg, dir.path()).map_err(e)?;
        let bytes = std::fs::read(dir.path().join(pipeline::TRADEOFF_FILE)).map_err(e)?;
        files.push((rows.len(), bytes));
    }
    let same = files[0].1 == files[1].1;
    Ok((
        same && files[0].0 > 0,
        format!("{} rows, {} bytes, byte-identical {same}", files[0].0, files[0].1.len()),
    ))
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "gradient oracle", gradient_oracle()),
        (2, "rate and EAR oracles", rate_oracles()),
        (3, "attack invariants", attack_invariants()),
    ];
    match standard() {
        Ok(st) => {
            results.push((4, "attack efficacy", attack_efficacy(&st)));
            results.push((5, "defense efficacy", defense_efficacy(&st)));
            results.push((9, "learning sanity", learning_sanity(&st)));
            results.push((8, "privacy-utility trend", privacy_utility(&st)));
        }
        Err(err) => {
            for (n, name) in [(4, "attack efficacy"), (5, "defense efficacy"), (8, "privacy-utility trend"), (9, "learning sanity")] {
                results.push((n, name, Err(format!("standard preset failed: {err}"))));
            }
        }
    }
    results.push((6, "DP-SGD correctness", dp_correctness()));
    results.push((7, "accountant", accountant()));
    results.push((10, "determinism", determinism()));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, outcome) in &results {
        let (ok, detail) = match outcome {
            Ok((ok, d)) => (*ok, d.clone()),
            Err(err) => (false, format!("error: {err}")),
        };
        failed += usize::from(!ok);
        println!("{} {n:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
