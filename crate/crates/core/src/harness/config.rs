//! JSON run configuration. Unknown keys are rejected everywhere; a missing
//! required key is reported with its full dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{AttackKind, AttackSpec};
use crate::beamcode::EffRateParams;
use crate::channel::ScenarioConfig;
use crate::defense::AdvTrainConfig;
use crate::error::{Error, Result};
use crate::nn::{default_width, mlp_specs, LayerSpec, Normalization};
use crate::privacy::DpConfig;

/// Default attack-strength grid.
pub const DEFAULT_EPSILONS: [f64; 6] = [0.01, 0.03, 0.05, 0.1, 0.2, 0.3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Case {
    /// Non-private model trained with RMSprop.
    C1,
    /// Private model trained with DP-SGD.
    C2,
}

impl Case {
    pub fn name(self) -> &'static str {
        match self {
            Case::C1 => "C1",
            Case::C2 => "C2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Rmsprop,
    Sgd,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> From<OneOrMany<T>> for Vec<T> {
    fn from(v: OneOrMany<T>) -> Self {
        match v {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Accepts either a single value or a list.
fn one_or_many<'de, D, T>(d: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    OneOrMany::deserialize(d).map(Vec::from)
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Codebook size.
    #[serde(default = "DatasetConfig::default_beams")]
    pub n_beams: usize,
    /// Train / validation / test fractions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

impl DatasetConfig {
    fn default_beams() -> usize {
        512
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_beams: Self::default_beams(),
            split: default_split(),
        }
    }
}

/// Effective-rate time constants in seconds; the SNR comes from the
/// scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffRateConfig {
    pub t_train: f64,
    pub t_beam_coherence: f64,
    pub t_channel_coherence: f64,
}

impl Default for EffRateConfig {
    fn default() -> Self {
        Self {
            t_train: 1e-3,
            t_beam_coherence: 10e-3,
            t_channel_coherence: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "ModelConfig::default_hidden")]
    pub hidden_layers: usize,
    /// Hidden width; `max(2·d, 128)` when absent.
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default = "ModelConfig::default_norm")]
    pub normalization: Normalization,
    #[serde(default = "ModelConfig::default_dropout")]
    pub dropout_rate: f64,
    /// Explicit hidden layers; overrides the four fields above.
    #[serde(default)]
    pub layers: Option<Vec<LayerSpec>>,
    #[serde(default = "ModelConfig::default_epochs")]
    pub epochs: usize,
    #[serde(default = "ModelConfig::default_batch")]
    pub batch_size: usize,
    #[serde(default = "ModelConfig::default_lr")]
    pub learning_rate: f64,
    #[serde(default = "ModelConfig::default_optimizer")]
    pub optimizer: OptimizerKind,
}

impl ModelConfig {
    fn default_hidden() -> usize {
        4
    }
    fn default_norm() -> Normalization {
        Normalization::BatchNorm
    }
    fn default_dropout() -> f64 {
        0.05
    }
    fn default_epochs() -> usize {
        10
    }
    fn default_batch() -> usize {
        100
    }
    fn default_lr() -> f64 {
        0.25
    }
    fn default_optimizer() -> OptimizerKind {
        OptimizerKind::Rmsprop
    }

    /// Layer specs for a model with `input_dim` inputs and `outputs`
    /// outputs. For `C2` batch norm is replaced by layer norm, since
    /// per-example gradients are undefined under batch statistics.
    pub fn specs(&self, input_dim: usize, outputs: usize, case: Case) -> Vec<LayerSpec> {
        let private = |n: Normalization| match (case, n) {
            (Case::C2, Normalization::BatchNorm) => Normalization::LayerNorm,
            _ => n,
        };
        match &self.layers {
            Some(hidden) => {
                let mut specs: Vec<LayerSpec> = hidden
                    .iter()
                    .map(|s| LayerSpec {
                        normalization: private(s.normalization),
                        ..*s
                    })
                    .collect();
                specs.push(LayerSpec::output(outputs));
                specs
            }
            None => mlp_specs(
                self.hidden_layers,
                self.width.unwrap_or_else(|| default_width(input_dim)),
                private(self.normalization),
                self.dropout_rate,
                outputs,
            ),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all model fields have defaults")
    }
}

/// Attack sweep: every kind is run at every ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackGrid {
    #[serde(default = "AttackGrid::default_kinds", deserialize_with = "one_or_many")]
    pub kind: Vec<AttackKind>,
    #[serde(default = "AttackGrid::default_eps", deserialize_with = "one_or_many")]
    pub epsilon: Vec<f64>,
    #[serde(default = "AttackGrid::default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default = "AttackGrid::default_decay")]
    pub decay: f64,
    #[serde(default = "AttackGrid::default_restarts")]
    pub restarts: usize,
    #[serde(default = "AttackGrid::default_random_start")]
    pub random_start: bool,
}

impl AttackGrid {
    fn default_kinds() -> Vec<AttackKind> {
        AttackKind::ALL.to_vec()
    }
    fn default_eps() -> Vec<f64> {
        DEFAULT_EPSILONS.to_vec()
    }
    fn default_iterations() -> usize {
        10
    }
    fn default_decay() -> f64 {
        1.0
    }
    fn default_restarts() -> usize {
        4
    }
    fn default_random_start() -> bool {
        true
    }

    /// Spec for one grid cell; the seed is filled in by the caller.
    pub fn spec(&self, kind: AttackKind, epsilon: f64, seed: u64) -> AttackSpec {
        AttackSpec {
            kind,
            epsilon,
            iterations: self.iterations,
            step: self.step,
            decay: self.decay,
            restarts: self.restarts,
            random_start: self.random_start,
            seed,
        }
    }
}

impl Default for AttackGrid {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all attack fields have defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseConfig {
    #[serde(default = "DefenseConfig::default_attack")]
    pub attack: AttackKind,
    #[serde(default = "DefenseConfig::default_eps")]
    pub epsilon: f64,
    #[serde(default = "DefenseConfig::default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default = "DefenseConfig::default_mix")]
    pub mix_ratio: f64,
    #[serde(default = "DefenseConfig::default_rounds")]
    pub max_rounds: usize,
    #[serde(default = "DefenseConfig::default_tol")]
    pub plateau_tol: f64,
    #[serde(default = "DefenseConfig::default_window")]
    pub plateau_window: usize,
    #[serde(default)]
    pub from_scratch: bool,
    /// Learning rate during adversarial training; the training learning
    /// rate of the case when absent.
    #[serde(default)]
    pub learning_rate: Option<f64>,
}

impl DefenseConfig {
    fn default_attack() -> AttackKind {
        AttackKind::Pgd
    }
    fn default_eps() -> f64 {
        0.1
    }
    fn default_iterations() -> usize {
        10
    }
    fn default_mix() -> f64 {
        0.5
    }
    fn default_rounds() -> usize {
        5
    }
    fn default_tol() -> f64 {
        0.01
    }
    fn default_window() -> usize {
        3
    }

    pub fn adv_config(&self, grid: &AttackGrid, batch_size: usize, seed: u64) -> AdvTrainConfig {
        let mut attack = grid.spec(self.attack, self.epsilon, seed);
        attack.iterations = self.iterations;
        attack.step = self.step;
        AdvTrainConfig {
            attack,
            mix_ratio: self.mix_ratio,
            max_rounds: self.max_rounds,
            plateau_tol: self.plateau_tol,
            plateau_window: self.plateau_window,
            from_scratch: self.from_scratch,
            batch_size,
            seed,
        }
    }
}

impl Default for DefenseConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all defense fields have defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    #[serde(default = "PrivacyConfig::default_clip")]
    pub clip_norm: f64,
    #[serde(default = "PrivacyConfig::default_sigma")]
    pub noise_multiplier: f64,
    #[serde(default = "PrivacyConfig::default_delta")]
    pub delta: f64,
    /// When set, `noise_multiplier` is replaced by the smallest σ reaching
    /// this ε* after `epochs` epochs.
    #[serde(default)]
    pub target_epsilon: Option<f64>,
    #[serde(default = "PrivacyConfig::default_lr")]
    pub learning_rate: f64,
    #[serde(default = "PrivacyConfig::default_epochs")]
    pub epochs: usize,
    #[serde(default = "PrivacyConfig::default_batch")]
    pub batch_size: usize,
}

impl PrivacyConfig {
    fn default_clip() -> f64 {
        1.0
    }
    fn default_sigma() -> f64 {
        1.0
    }
    fn default_delta() -> f64 {
        1e-5
    }
    fn default_lr() -> f64 {
        0.0005
    }
    fn default_epochs() -> usize {
        15
    }
    fn default_batch() -> usize {
        100
    }

    pub fn dp_config(&self, noise_multiplier: f64, seed: u64) -> DpConfig {
        DpConfig {
            clip_norm: self.clip_norm,
            noise_multiplier,
            delta: self.delta,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
        }
    }
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all privacy fields have defaults")
    }
}

/// The privacy/robustness sweep run by `tradeoff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradeoffConfig {
    #[serde(default = "TradeoffConfig::default_attack")]
    pub attack: AttackKind,
    /// ε grid; the `attack.epsilon` grid when absent.
    #[serde(default, deserialize_with = "opt_one_or_many")]
    pub epsilon: Option<Vec<f64>>,
    #[serde(default = "TradeoffConfig::default_sigmas", deserialize_with = "one_or_many")]
    pub noise_multipliers: Vec<f64>,
}

fn opt_one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<f64>>, D::Error> {
    Ok(Option::<OneOrMany<f64>>::deserialize(d)?.map(Vec::from))
}

impl TradeoffConfig {
    fn default_attack() -> AttackKind {
        AttackKind::Fgsm
    }
    fn default_sigmas() -> Vec<f64> {
        vec![0.5, 1.0, 2.0]
    }
}

impl Default for TradeoffConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all tradeoff fields have defaults")
    }
}

/// One experiment: scenario, model, attacks, defense, privacy and the case
/// being run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub eff_rate: EffRateConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub attack: AttackGrid,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub privacy: Option<PrivacyConfig>,
    #[serde(default)]
    pub tradeoff: TradeoffConfig,
    pub case: Case,
    #[serde(default = "RunConfig::default_output_dir")]
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Record wall-clock seconds in metrics rows. Off by default so that
    /// repeated runs produce byte-identical CSVs.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl RunConfig {
    fn default_output_dir() -> PathBuf {
        PathBuf::from("out")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            match missing_field(&inner.to_string()) {
                Some(field) if path == "." => Error::MissingKey(field),
                Some(field) => Error::MissingKey(format!("{path}.{field}")),
                None => Error::Config(format!("at `{path}`: {inner}")),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.case == Case::C2 && self.privacy.is_none() {
            return Err(Error::MissingKey("privacy".into()));
        }
        let [ft, fv, fe] = self.dataset.split;
        if [ft, fv, fe].iter().any(|f| !(0.0..=1.0).contains(f)) || (ft + fv + fe - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("dataset.split fractions {:?} must be in [0, 1] and sum to 1", self.dataset.split)));
        }
        if self.dataset.n_beams == 0 {
            return Err(Error::Config("dataset.n_beams must be at least 1".into()));
        }
        self.eff_params().validate()?;
        let m = &self.model;
        if m.batch_size == 0 || !(m.learning_rate > 0.0 && m.learning_rate.is_finite()) {
            return Err(Error::Config("model.batch_size and model.learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&m.dropout_rate) {
            return Err(Error::Config(format!("model.dropout_rate must lie in [0, 1), got {}", m.dropout_rate)));
        }
        if m.hidden_layers == 0 && m.layers.is_none() {
            return Err(Error::Config("model needs at least one hidden layer".into()));
        }
        if self.attack.kind.is_empty() || self.attack.epsilon.is_empty() {
            return Err(Error::Config("attack.kind and attack.epsilon must not be empty".into()));
        }
        for &kind in &self.attack.kind {
            for &eps in &self.attack.epsilon {
                self.attack.spec(kind, eps, 0).validate()?;
            }
        }
        self.defense.adv_config(&self.attack, m.batch_size, 0).validate()?;
        if let Some(p) = &self.privacy {
            p.dp_config(p.noise_multiplier, 0).validate()?;
            if let Some(t) = p.target_epsilon {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(Error::Config(format!("privacy.target_epsilon must be positive, got {t}")));
                }
            }
        }
        for &eps in self.tradeoff_epsilons() {
            self.attack.spec(self.tradeoff.attack, eps, 0).validate()?;
        }
        if self.tradeoff.noise_multipliers.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("tradeoff.noise_multipliers must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn eff_params(&self) -> EffRateParams {
        EffRateParams {
            t_train: self.eff_rate.t_train,
            t_beam_coherence: self.eff_rate.t_beam_coherence,
            t_channel_coherence: self.eff_rate.t_channel_coherence,
            snr_linear: self.scenario.snr_linear(),
        }
    }

    pub fn tradeoff_epsilons(&self) -> &[f64] {
        self.tradeoff.epsilon.as_deref().unwrap_or(&self.attack.epsilon)
    }

    /// Privacy section, or its defaults when absent.
    pub fn privacy_or_default(&self) -> PrivacyConfig {
        self.privacy.unwrap_or_default()
    }
}

/// Extracts `name` from serde's "missing field `name`" message.
fn missing_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("missing field `")?;
    Some(rest[..rest.find('`')?].to_string())
}
