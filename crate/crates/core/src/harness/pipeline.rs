//! The experiment stages, both in memory and backed by files in an output
//! directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{evaluate_clean, evaluate_under_attack, AttackKind, EvalContext, EvalMetrics};
use crate::beamcode::{build_dft_codebook, Codebook};
use crate::channel::{assemble_channel, generate_paths, ChannelTensor, TransmitConfig};
use crate::dataset::{build_dataset, normalize_features, split_dataset, Dataset, SplitPart};
use crate::defense::{adversarial_train, RoundRecord, StopReason};
use crate::error::{Error, Result};
use crate::harness::config::{Case, OptimizerKind, RunConfig};
use crate::harness::metrics::{read_metrics, write_metrics, MetricsRecord, Phase};
use crate::nn::{train, Checkpoint, EpochRecord, MlpParams, RmsProp, Sgd, TrainConfig};
use crate::privacy::{noise_for_target_epsilon, DpConfig, DpSgd, PrivacyLedger};
use crate::rng::{derive_seed, stream};

const DEFENSE_STREAM: u64 = 0x6465_6665;

pub const CHANNEL_FILE: &str = "channel.bsec";
pub const CODEBOOK_FILE: &str = "codebook.bsec";
pub const DATASET_FILE: &str = "dataset.bsec";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bsec";
pub const HISTORY_FILE: &str = "history.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const DEFENDED_FILE: &str = "defended.bsec";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRADEOFF_FILE: &str = "tradeoff.csv";

/// Channel, codebook and labelled dataset of one scenario.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub channel: ChannelTensor,
    pub codebook: Codebook,
    pub dataset: Dataset,
}

impl Workspace {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let s = &cfg.scenario;
        let channel = assemble_channel(&generate_paths(s)?, s)?;
        let codebook = build_dft_codebook(s.num_antennas, cfg.dataset.n_beams)?;
        let raw = build_dataset(s, &channel, &codebook, &TransmitConfig::default_for(s))?;
        let [ft, fv, fe] = cfg.dataset.split;
        let dataset = normalize_features(split_dataset(raw, (ft, fv, fe), cfg.seed)?)?;
        Ok(Self {
            channel,
            codebook,
            dataset,
        })
    }

    pub fn eval_context(&self, cfg: &RunConfig) -> EvalContext<'_> {
        EvalContext {
            channel: &self.channel,
            codebook: &self.codebook,
            eff: cfg.eff_params(),
        }
    }
}

/// What a checkpoint records about how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config_hash: String,
    pub case: Case,
    pub defended: bool,
    /// Accountant ε*; absent for the non-private case.
    pub dp_epsilon: Option<f64>,
    pub ledger: Option<PrivacyLedger>,
    pub config: RunConfig,
}

impl ModelMeta {
    pub fn dp_epsilon_or_inf(&self) -> f64 {
        self.dp_epsilon.unwrap_or(f64::INFINITY)
    }
}

/// A trained model with everything later stages need.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: MlpParams,
    pub meta: ModelMeta,
    /// RMSprop state, kept for fine-tuning.
    pub optimizer: Option<RmsProp>,
    /// DP-SGD settings, kept so that adversarial training stays private.
    pub dp: Option<DpConfig>,
    pub history: Vec<EpochRecord>,
    /// ε* after each epoch (private case only).
    pub epoch_epsilons: Vec<f64>,
}

/// Poisson rate and steps per epoch of a private run on `n` rows.
fn private_schedule(n: usize, batch: usize) -> (f64, u64) {
    ((batch as f64 / n as f64).min(1.0), n.div_ceil(batch) as u64)
}

/// Trains a fresh model. `noise_multiplier` overrides the configured σ for
/// the private case.
pub fn train_model(cfg: &RunConfig, dataset: &Dataset, case: Case, noise_multiplier: Option<f64>) -> Result<TrainedModel> {
    let specs = cfg.model.specs(dataset.feature_dim, dataset.n_beams, case);
    let mut params = MlpParams::init(dataset.feature_dim, &specs, cfg.seed)?;
    let mut meta = ModelMeta {
        config_hash: cfg.hash(),
        case,
        defended: false,
        dp_epsilon: None,
        ledger: None,
        config: cfg.clone(),
    };
    match case {
        Case::C1 => {
            let tc = TrainConfig {
                epochs: cfg.model.epochs,
                batch_size: cfg.model.batch_size,
                seed: cfg.seed,
            };
            let lr = cfg.model.learning_rate;
            let (history, optimizer) = match cfg.model.optimizer {
                OptimizerKind::Rmsprop => {
                    let mut opt = RmsProp::new(lr);
                    (train(&mut params, dataset, &tc, &mut opt)?, Some(opt))
                }
                OptimizerKind::Sgd => (train(&mut params, dataset, &tc, &mut Sgd { learning_rate: lr })?, None),
            };
            Ok(TrainedModel {
                params,
                meta,
                optimizer,
                dp: None,
                history,
                epoch_epsilons: Vec::new(),
            })
        }
        Case::C2 => {
            let p = cfg.privacy.ok_or_else(|| Error::MissingKey("privacy".into()))?;
            let (q, steps_per_epoch) = private_schedule(dataset.split.train.len().max(1), p.batch_size);
            let sigma = match (noise_multiplier, p.target_epsilon) {
                (Some(s), _) => s,
                (None, Some(t)) => noise_for_target_epsilon(t, q, steps_per_epoch * p.epochs as u64, p.delta)?,
                (None, None) => p.noise_multiplier,
            };
            let dp = p.dp_config(sigma, cfg.seed);
            let run = crate::privacy::train_private(&mut params, dataset, &dp)?;
            let ledger = if run.history.is_empty() {
                PrivacyLedger::new(q, sigma, p.delta)?
            } else {
                run.ledger
            };
            meta.dp_epsilon = Some(ledger.epsilon);
            meta.ledger = Some(ledger);
            Ok(TrainedModel {
                params,
                meta,
                optimizer: None,
                dp: Some(dp),
                epoch_epsilons: run.history.iter().map(|r| r.epsilon).collect(),
                history: run.history.into_iter().map(|r| r.record).collect(),
            })
        }
    }
}

/// Adversarially trained model.
#[derive(Debug, Clone)]
pub struct DefendedModel {
    pub params: MlpParams,
    pub meta: ModelMeta,
    pub history: Vec<RoundRecord>,
    pub stop: StopReason,
}

/// Adversarial training of a trained model. Private models keep training
/// with DP-SGD and their ledger is charged for the extra steps.
pub fn defend_model(cfg: &RunConfig, dataset: &Dataset, model: &TrainedModel) -> Result<DefendedModel> {
    let seed = derive_seed(cfg.seed, DEFENSE_STREAM);
    let mut meta = model.meta.clone();
    meta.defended = true;
    let outcome = match (&model.dp, model.meta.case) {
        (Some(dp), Case::C2) => {
            let mut dp = *dp;
            if let Some(lr) = cfg.defense.learning_rate {
                dp.learning_rate = lr;
            }
            let adv = cfg.defense.adv_config(&cfg.attack, dp.batch_size, seed);
            let mut opt = DpSgd::new(dp)?;
            let out = adversarial_train(model.params.clone(), dataset, &adv, &mut opt)?;
            let (_, steps_per_epoch) = private_schedule(dataset.split.train.len().max(1), dp.batch_size);
            let mut ledger = match &model.meta.ledger {
                Some(l) => l.clone(),
                None => PrivacyLedger::new(
                    (dp.batch_size as f64 / dataset.split.train.len().max(1) as f64).min(1.0),
                    dp.noise_multiplier,
                    dp.delta,
                )?,
            };
            ledger.record_steps(steps_per_epoch * out.history.len() as u64);
            meta.dp_epsilon = Some(ledger.epsilon);
            meta.ledger = Some(ledger);
            out
        }
        _ => {
            let adv = cfg.defense.adv_config(&cfg.attack, cfg.model.batch_size, seed);
            let lr = cfg.defense.learning_rate.unwrap_or(cfg.model.learning_rate);
            match cfg.model.optimizer {
                OptimizerKind::Rmsprop => {
                    let mut opt = match &model.optimizer {
                        Some(o) => RmsProp {
                            learning_rate: lr,
                            acc: o.acc.clone(),
                        },
                        None => RmsProp::new(lr),
                    };
                    if cfg.defense.from_scratch {
                        opt.acc.clear();
                    }
                    adversarial_train(model.params.clone(), dataset, &adv, &mut opt)?
                }
                OptimizerKind::Sgd => {
                    adversarial_train(model.params.clone(), dataset, &adv, &mut Sgd { learning_rate: lr })?
                }
            }
        }
    };
    if outcome.stop == StopReason::Diverged && outcome.history.is_empty() {
        return Err(Error::Divergence("adversarial training diverged in its first round".into()));
    }
    Ok(DefendedModel {
        params: outcome.params,
        meta,
        history: outcome.history,
        stop: outcome.stop,
    })
}

/// Seed of the evaluation attack for one (kind, ε) cell; independent of
/// the order of the grid.
pub fn eval_attack_seed(seed: u64, kind: AttackKind, eps: f64) -> u64 {
    let k = AttackKind::ALL.iter().position(|&a| a == kind).expect("known kind") as u64;
    derive_seed(derive_seed(derive_seed(seed, stream::ATTACK), k), eps.to_bits())
}

fn record(cfg: &RunConfig, meta: &ModelMeta, phase: Phase, attack: &str, eps: f64, m: EvalMetrics, wall: f64) -> MetricsRecord {
    MetricsRecord {
        scenario_id: cfg.scenario.scenario_id.clone(),
        case: meta.case,
        phase,
        attack: attack.to_string(),
        eps,
        dp_epsilon: meta.dp_epsilon_or_inf(),
        mse: m.mse,
        top1_acc: m.top1_acc,
        ear_mean: m.ear_mean,
        n_samples: m.n_samples,
        seed: cfg.seed,
        wall_time_s: if cfg.record_wall_time { wall } else { 0.0 },
    }
}

/// One clean row followed by one row per `(kind, ε)` of `attacks`, all on
/// the test split.
pub fn evaluate_model(
    cfg: &RunConfig,
    ws: &Workspace,
    params: &MlpParams,
    meta: &ModelMeta,
    attacks: &[(AttackKind, f64)],
) -> Result<Vec<MetricsRecord>> {
    let idx = ws.dataset.indices(SplitPart::Test);
    let ctx = ws.eval_context(cfg);
    let (clean_phase, attacked_phase) = if meta.defended {
        (Phase::Defended, Phase::DefendedAttacked)
    } else {
        (Phase::Clean, Phase::Attacked)
    };
    let t = Instant::now();
    let clean = evaluate_clean(params, &ws.dataset, idx, &ctx)?;
    let mut rows = vec![record(cfg, meta, clean_phase, "none", 0.0, clean, t.elapsed().as_secs_f64())];
    for &(kind, eps) in attacks {
        let t = Instant::now();
        let spec = cfg.attack.spec(kind, eps, eval_attack_seed(cfg.seed, kind, eps));
        let m = evaluate_under_attack(params, &ws.dataset, idx, &spec, &ctx)?;
        rows.push(record(cfg, meta, attacked_phase, kind.name(), eps, m, t.elapsed().as_secs_f64()));
    }
    for r in &rows {
        r.validate()?;
    }
    Ok(rows)
}

/// The configured attack grid, kinds outermost.
pub fn attack_grid(cfg: &RunConfig) -> Vec<(AttackKind, f64)> {
    cfg.attack
        .kind
        .iter()
        .flat_map(|&k| cfg.attack.epsilon.iter().map(move |&e| (k, e)))
        .collect()
}

/// One cell of the tradeoff sweep: the case and, for C2, the noise
/// multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffCell {
    pub case: Case,
    pub noise_multiplier: Option<f64>,
}

impl TradeoffCell {
    fn file_name(&self) -> String {
        match self.noise_multiplier {
            None => format!("{}.csv", self.case.name()),
            Some(s) => format!("{}_sigma_{}.csv", self.case.name(), s),
        }
    }
}

/// Rows of one tradeoff cell: the undefended model clean and under every
/// ε, then the adversarially trained model likewise.
pub fn run_tradeoff_cell(cfg: &RunConfig, ws: &Workspace, cell: TradeoffCell) -> Result<Vec<MetricsRecord>> {
    let trained = train_model(cfg, &ws.dataset, cell.case, cell.noise_multiplier)?;
    let attacks: Vec<(AttackKind, f64)> = cfg.tradeoff_epsilons().iter().map(|&e| (cfg.tradeoff.attack, e)).collect();
    let mut rows = evaluate_model(cfg, ws, &trained.params, &trained.meta, &attacks)?;
    let defended = defend_model(cfg, &ws.dataset, &trained)?;
    rows.extend(evaluate_model(cfg, ws, &defended.params, &defended.meta, &attacks)?);
    Ok(rows)
}

/// Full factorial {C1, C2} × σ grid × {undefended, defended} × ε grid.
/// The non-private model does not depend on σ; it is trained once and its
/// rows are repeated for every σ so that each σ slice is complete.
///
/// With `cell_dir`, each cell's rows are stored in their own file there
/// and reused on a later run, so an interrupted sweep can resume.
pub fn tradeoff(cfg: &RunConfig, ws: &Workspace, cell_dir: Option<&Path>) -> Result<Vec<MetricsRecord>> {
    let mut cells = vec![TradeoffCell {
        case: Case::C1,
        noise_multiplier: None,
    }];
    cells.extend(cfg.tradeoff.noise_multipliers.iter().map(|&s| TradeoffCell {
        case: Case::C2,
        noise_multiplier: Some(s),
    }));
    let mut cfg = cfg.clone();
    if cfg.privacy.is_none() {
        cfg.privacy = Some(cfg.privacy_or_default());
    }
    let cfg = &cfg;
    if let Some(dir) = cell_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let run_cell = |cell: &TradeoffCell| -> Result<Vec<MetricsRecord>> {
        let path = cell_dir.map(|d| d.join(cell.file_name()));
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            return read_metrics(BufReader::new(File::open(p).map_err(|e| Error::io(p, e))?));
        }
        let rows = run_tradeoff_cell(cfg, ws, *cell)?;
        if let Some(p) = &path {
            let tmp = p.with_extension("csv.tmp");
            write_metrics(BufWriter::new(create(&tmp)?), &rows)?;
            std::fs::rename(&tmp, p).map_err(|e| Error::io(p, e))?;
        }
        Ok(rows)
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cells.len());
    let mut results: Vec<Option<Result<Vec<MetricsRecord>>>> = (0..cells.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_cells, chunk_out) in cells.chunks(cells.len().div_ceil(workers)).zip(results.chunks_mut(cells.len().div_ceil(workers))) {
            let run_cell = &run_cell;
            scope.spawn(move || {
                for (cell, out) in chunk_cells.iter().zip(chunk_out) {
                    *out = Some(run_cell(cell));
                }
            });
        }
    });
    let mut per_cell = Vec::with_capacity(cells.len());
    for r in results {
        per_cell.push(r.expect("every cell ran")?);
    }
    let c1 = &per_cell[0];
    let mut rows = Vec::new();
    for c2 in &per_cell[1..] {
        rows.extend(c1.iter().cloned());
        rows.extend(c2.iter().cloned());
    }
    Ok(rows)
}

fn create(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Content hashes of everything a run wrote, plus the config that produced
/// it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub scenario_id: String,
    pub seed: u64,
    /// File name → SHA-256.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        serde_json::from_reader(open(&path)?).map_err(|e| Error::format("manifest", e.to_string()))
    }

    fn load_or_new(dir: &Path, cfg: &RunConfig) -> Self {
        Self::load(dir).unwrap_or_else(|_| Self {
            config_hash: cfg.hash(),
            scenario_id: cfg.scenario.scenario_id.clone(),
            seed: cfg.seed,
            files: BTreeMap::new(),
        })
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Fails unless `name` exists and matches its recorded hash.
    pub fn verify(&self, dir: &Path, name: &str) -> Result<()> {
        let want = self
            .files
            .get(name)
            .ok_or_else(|| Error::format("manifest", format!("no entry for {name}")))?;
        let got = sha256_file(&dir.join(name))?;
        if &got != want {
            return Err(Error::format("manifest", format!("{name} has hash {got}, manifest says {want}")));
        }
        Ok(())
    }
}

/// Records the hashes of `names` (already written in `dir`).
fn register(dir: &Path, cfg: &RunConfig, names: &[&str]) -> Result<Manifest> {
    let mut m = Manifest::load_or_new(dir, cfg);
    m.config_hash = cfg.hash();
    for &n in names {
        m.files.insert(n.to_string(), sha256_file(&dir.join(n))?);
    }
    m.save(dir)?;
    Ok(m)
}

/// `generate`: channel, codebook and dataset files plus the manifest.
pub fn generate_to(cfg: &RunConfig, dir: &Path) -> Result<Manifest> {
    let ws = Workspace::build(cfg)?;
    ws.channel.write_to(BufWriter::new(create(&dir.join(CHANNEL_FILE))?))?;
    ws.codebook.write_to(BufWriter::new(create(&dir.join(CODEBOOK_FILE))?))?;
    ws.dataset.write_to(BufWriter::new(create(&dir.join(DATASET_FILE))?))?;
    register(dir, cfg, &[CHANNEL_FILE, CODEBOOK_FILE, DATASET_FILE])
}

/// Loads the files written by [`generate_to`] after checking their hashes.
pub fn load_workspace(dir: &Path) -> Result<Workspace> {
    let m = Manifest::load(dir)?;
    for f in [CHANNEL_FILE, CODEBOOK_FILE, DATASET_FILE] {
        m.verify(dir, f)?;
    }
    Ok(Workspace {
        channel: ChannelTensor::read_from(open(&dir.join(CHANNEL_FILE))?)?,
        codebook: Codebook::read_from(open(&dir.join(CODEBOOK_FILE))?)?,
        dataset: Dataset::read_from(open(&dir.join(DATASET_FILE))?)?,
    })
}

fn check_compatible(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    if ws.dataset.scenario_id != cfg.scenario.scenario_id {
        return Err(Error::Config(format!(
            "dataset is for scenario `{}`, config for `{}`",
            ws.dataset.scenario_id, cfg.scenario.scenario_id
        )));
    }
    ws.channel.check_against(&cfg.scenario)
}

fn write_checkpoint(path: &Path, params: &MlpParams, optimizer: Option<RmsProp>, meta: &ModelMeta) -> Result<()> {
    Checkpoint {
        params: params.clone(),
        optimizer,
        config_json: serde_json::to_string(meta)?,
    }
    .write_to(BufWriter::new(create(path)?))
}

/// Reads a checkpoint and its embedded metadata.
pub fn read_checkpoint(path: &Path) -> Result<(Checkpoint, ModelMeta)> {
    let ck = Checkpoint::read_from(open(path)?)?;
    let meta = serde_json::from_str(&ck.config_json).map_err(|e| Error::format("checkpoint metadata", e.to_string()))?;
    Ok((ck, meta))
}

fn write_history(path: &Path, history: &[EpochRecord], epsilons: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
    let private = !epsilons.is_empty();
    let mut header = vec!["epoch", "batch_loss", "train_mse", "val_mse"];
    if private {
        header.push("dp_epsilon");
    }
    w.write_record(&header)?;
    for (i, r) in history.iter().enumerate() {
        let mut row = vec![
            r.epoch.to_string(),
            r.batch_loss.to_string(),
            r.train_mse.to_string(),
            r.val_mse.map(|v| v.to_string()).unwrap_or_default(),
        ];
        if private {
            row.push(epsilons[i].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct TrainMetadata<'a> {
    meta: &'a ModelMeta,
    architecture: Vec<crate::nn::LayerSpec>,
    num_params: usize,
    param_hash: String,
    final_val_mse: Option<f64>,
}

/// `train`: checkpoint, per-epoch history and metadata for the configured
/// case.
pub fn train_to(cfg: &RunConfig, dir: &Path) -> Result<TrainedModel> {
    let ws = load_workspace(dir)?;
    check_compatible(cfg, &ws)?;
    let model = train_model(cfg, &ws.dataset, cfg.case, None)?;
    write_checkpoint(&dir.join(CHECKPOINT_FILE), &model.params, model.optimizer.clone(), &model.meta)?;
    write_history(&dir.join(HISTORY_FILE), &model.history, &model.epoch_epsilons)?;
    let md = TrainMetadata {
        meta: &model.meta,
        architecture: model.params.specs(),
        num_params: model.params.num_params(),
        param_hash: model.params.content_hash(),
        final_val_mse: model.history.last().and_then(|r| r.val_mse),
    };
    let path = dir.join(METADATA_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&md)? + "\n").map_err(|e| Error::io(&path, e))?;
    register(dir, cfg, &[CHECKPOINT_FILE, HISTORY_FILE, METADATA_FILE])?;
    Ok(model)
}

fn trained_from_checkpoint(ck: Checkpoint, meta: ModelMeta, cfg: &RunConfig, dataset: &Dataset) -> Result<TrainedModel> {
    let dp = match meta.case {
        Case::C2 => {
            let p = cfg.privacy.ok_or_else(|| Error::MissingKey("privacy".into()))?;
            let sigma = meta.ledger.as_ref().map_or(p.noise_multiplier, |l| l.noise_multiplier);
            Some(p.dp_config(sigma, cfg.seed))
        }
        Case::C1 => None,
    };
    if ck.params.input_dim != dataset.feature_dim || ck.params.output_dim() != dataset.n_beams {
        return Err(Error::Dimension(format!(
            "checkpoint maps {} → {}, dataset has {} features and {} beams",
            ck.params.input_dim,
            ck.params.output_dim(),
            dataset.feature_dim,
            dataset.n_beams
        )));
    }
    Ok(TrainedModel {
        params: ck.params,
        meta,
        optimizer: ck.optimizer,
        dp,
        history: Vec::new(),
        epoch_epsilons: Vec::new(),
    })
}

/// `attack-eval`: metrics rows for the checkpoint at `checkpoint` (the
/// trained checkpoint when `None`), written to `metrics.csv`.
pub fn attack_eval_to(cfg: &RunConfig, dir: &Path, checkpoint: Option<&Path>) -> Result<Vec<MetricsRecord>> {
    let ws = load_workspace(dir)?;
    check_compatible(cfg, &ws)?;
    let path = checkpoint.map_or_else(|| dir.join(CHECKPOINT_FILE), Path::to_path_buf);
    let (ck, meta) = read_checkpoint(&path)?;
    let model = trained_from_checkpoint(ck, meta, cfg, &ws.dataset)?;
    let rows = evaluate_model(cfg, &ws, &model.params, &model.meta, &attack_grid(cfg))?;
    write_metrics(BufWriter::new(create(&dir.join(METRICS_FILE))?), &rows)?;
    register(dir, cfg, &[METRICS_FILE])?;
    Ok(rows)
}

fn write_rounds(path: &Path, rounds: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
    for r in rounds {
        w.serialize(r)?;
    }
    if rounds.is_empty() {
        w.write_record(["round", "train_loss", "val_clean_mse", "val_adv_mse", "max_perturbation"])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `defend`: adversarially trains the checkpoint and writes the defended
/// checkpoint and round history.
pub fn defend_to(cfg: &RunConfig, dir: &Path, checkpoint: Option<&Path>) -> Result<DefendedModel> {
    let ws = load_workspace(dir)?;
    check_compatible(cfg, &ws)?;
    let path = checkpoint.map_or_else(|| dir.join(CHECKPOINT_FILE), Path::to_path_buf);
    let (ck, meta) = read_checkpoint(&path)?;
    let model = trained_from_checkpoint(ck, meta, cfg, &ws.dataset)?;
    let defended = defend_model(cfg, &ws.dataset, &model)?;
    write_checkpoint(&dir.join(DEFENDED_FILE), &defended.params, None, &defended.meta)?;
    write_rounds(&dir.join(ROUNDS_FILE), &defended.history)?;
    register(dir, cfg, &[DEFENDED_FILE, ROUNDS_FILE])?;
    Ok(defended)
}

/// `tradeoff`: builds the scenario in memory, runs every cell (resuming
/// from `cells/<config hash>/`) and writes the merged `tradeoff.csv`.
pub fn tradeoff_to(cfg: &RunConfig, dir: &Path) -> Result<Vec<MetricsRecord>> {
    let ws = Workspace::build(cfg)?;
    let cell_dir: PathBuf = dir.join("cells").join(&cfg.hash()[..16]);
    let rows = tradeoff(cfg, &ws, Some(&cell_dir))?;
    write_metrics(BufWriter::new(create(&dir.join(TRADEOFF_FILE))?), &rows)?;
    register(dir, cfg, &[TRADEOFF_FILE])?;
    Ok(rows)
}
