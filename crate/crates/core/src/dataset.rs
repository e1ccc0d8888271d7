//! Labelled samples built from channels, plus splitting, normalization and
//! persistence.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::beamcode::{beam_rates, build_dft_codebook, optimal_beam, Codebook, DftRates};
use crate::channel::{omni_receive, ChannelTensor, ScenarioConfig, TransmitConfig};
use crate::container::{self, RecordTag};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, SplitMix64};

/// Standard deviations below this are treated as constant columns.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Omni-received pilot features, length `2·X·K`.
    pub features: Vec<f64>,
    /// Serving-BS per-beam rates divided by their maximum.
    pub label_rates: Vec<f64>,
    pub label_beam: usize,
    pub user_id: usize,
    pub bs_id: usize,
    /// Maximum unnormalized rate of the serving BS, bits/s/Hz.
    pub rate_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    /// Divisor actually applied to a column: its std, or 1 when degenerate.
    pub fn scale(&self, dim: usize) -> f64 {
        if self.std[dim] < DEGENERATE_STD {
            1.0
        } else {
            self.std[dim]
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenario_id: String,
    pub feature_dim: usize,
    pub n_beams: usize,
    pub samples: Vec<Sample>,
    /// Present once features have been normalized; features are then stored
    /// in normalized units.
    pub feature_norm: Option<FeatureNorm>,
    pub split: Split,
}

fn is_default_dft(codebook: &Codebook) -> bool {
    build_dft_codebook(codebook.num_antennas, codebook.n_beams)
        .map(|c| c.vectors == codebook.vectors)
        .unwrap_or(false)
}

/// One sample per user, labelled against its serving BS (highest maximum
/// rate, lowest index on ties). The receiver-noise stream is
/// `derive_seed(scenario.seed, RECEIVER_NOISE)`.
pub fn build_dataset(
    scenario: &ScenarioConfig,
    channel: &ChannelTensor,
    codebook: &Codebook,
    tx: &TransmitConfig,
) -> Result<Dataset> {
    scenario.validate()?;
    channel.check_against(scenario)?;
    if codebook.num_antennas != scenario.num_antennas {
        return Err(Error::Dimension(format!(
            "codebook has {} antennas, scenario {}",
            codebook.num_antennas, scenario.num_antennas
        )));
    }
    let features = omni_receive(
        channel,
        tx,
        scenario,
        derive_seed(scenario.seed, stream::RECEIVER_NOISE),
    )?;
    let snr = scenario.snr_linear();
    let fast = if is_default_dft(codebook) {
        Some(DftRates::new(codebook.num_antennas, codebook.n_beams)?)
    } else {
        None
    };
    let mut samples = Vec::with_capacity(scenario.num_users);
    for (user, feats) in features.into_iter().enumerate() {
        let mut best: Option<(usize, Vec<f64>, f64)> = None;
        for bs in 0..scenario.num_bs {
            let slice = channel.link(user, bs);
            let rates = match &fast {
                Some(f) => f.rates(slice, snr)?,
                None => beam_rates(slice, codebook, snr)?,
            };
            let peak = rates[optimal_beam(&rates)?];
            if best.as_ref().is_none_or(|b| peak > b.2) {
                best = Some((bs, rates, peak));
            }
        }
        let (bs_id, mut rates, peak) = best.expect("num_bs >= 1");
        if peak > 0.0 {
            rates.iter_mut().for_each(|r| *r /= peak);
        }
        let label_beam = optimal_beam(&rates)?;
        samples.push(Sample {
            features: feats,
            label_rates: rates,
            label_beam,
            user_id: user,
            bs_id,
            rate_scale: peak,
        });
    }
    Ok(Dataset {
        scenario_id: scenario.scenario_id.clone(),
        feature_dim: scenario.feature_dim(),
        n_beams: codebook.n_beams,
        samples,
        feature_norm: None,
        split: Split::default(),
    })
}

/// Seeded shuffle then contiguous split. Validation and test sizes are
/// `floor(n·fraction)`; the remainder goes to training. Indices are sorted
/// within each part.
pub fn split_dataset(mut dataset: Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Dataset> {
    let (ft, fv, fe) = fractions;
    if !(ft > 0.0) {
        return Err(Error::Config(format!("train fraction must be positive, got {ft}")));
    }
    if !(fv >= 0.0 && fe >= 0.0) || ((ft + fv + fe) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions ({ft}, {fv}, {fe}) must be non-negative and sum to 1"
        )));
    }
    let n = dataset.samples.len();
    if n == 0 {
        return Err(Error::Config("cannot split an empty dataset".into()));
    }
    let n_val = (n as f64 * fv + 1e-9).floor() as usize;
    let n_test = (n as f64 * fe + 1e-9).floor() as usize;
    if n_val + n_test >= n {
        return Err(Error::Config(format!("split of {n} samples leaves no training data")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(derive_seed(seed, stream::SPLIT)).shuffle(&mut order);
    let n_train = n - n_val - n_test;
    let part = |range: std::ops::Range<usize>| {
        let mut v = order[range].to_vec();
        v.sort_unstable();
        v
    };
    dataset.split = Split {
        train: part(0..n_train),
        val: part(n_train..n_train + n_val),
        test: part(n_train + n_val..n),
    };
    Ok(dataset)
}

/// Per-dimension z-score with statistics from the training split only.
/// Constant columns are centered but not scaled.
pub fn normalize_features(mut dataset: Dataset) -> Result<Dataset> {
    if dataset.split.train.is_empty() {
        return Err(Error::Config("normalization needs a non-empty train split".into()));
    }
    let d = dataset.feature_dim;
    let n = dataset.split.train.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in &dataset.split.train {
        for (m, x) in mean.iter_mut().zip(&dataset.samples[i].features) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for &i in &dataset.split.train {
        for ((v, x), m) in var.iter_mut().zip(&dataset.samples[i].features).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std: Vec<f64> = var.into_iter().map(|v| (v / n).sqrt()).collect();
    let norm = FeatureNorm { mean, std };
    for s in &mut dataset.samples {
        for (j, x) in s.features.iter_mut().enumerate() {
            *x = (*x - norm.mean[j]) / norm.scale(j);
        }
    }
    dataset.feature_norm = Some(norm);
    Ok(dataset)
}

impl Dataset {
    pub fn indices(&self, part: SplitPart) -> &[usize] {
        match part {
            SplitPart::Train => &self.split.train,
            SplitPart::Val => &self.split.val,
            SplitPart::Test => &self.split.test,
        }
    }

    /// Feature matrix of the given sample indices.
    pub fn features(&self, indices: &[usize]) -> Array2<f64> {
        let mut m = Array2::zeros((indices.len(), self.feature_dim));
        for (r, &i) in indices.iter().enumerate() {
            m.row_mut(r)
                .iter_mut()
                .zip(&self.samples[i].features)
                .for_each(|(d, s)| *d = *s);
        }
        m
    }

    /// Label matrix (normalized rate vectors) of the given sample indices.
    pub fn labels(&self, indices: &[usize]) -> Array2<f64> {
        let mut m = Array2::zeros((indices.len(), self.n_beams));
        for (r, &i) in indices.iter().enumerate() {
            m.row_mut(r)
                .iter_mut()
                .zip(&self.samples[i].label_rates)
                .for_each(|(d, s)| *d = *s);
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.samples.len();
        for s in &self.samples {
            if s.features.len() != self.feature_dim || s.label_rates.len() != self.n_beams {
                return Err(Error::Dimension(format!(
                    "sample of user {} has {} features and {} rates",
                    s.user_id,
                    s.features.len(),
                    s.label_rates.len()
                )));
            }
        }
        let mut seen = vec![false; n];
        for &i in self.split.train.iter().chain(&self.split.val).chain(&self.split.test) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::format("dataset", format!("split index {i} out of range or repeated")));
            }
        }
        let assigned = seen.iter().filter(|&&s| s).count();
        if assigned != 0 && assigned != n {
            return Err(Error::format("dataset", "split does not cover every sample"));
        }
        if let Some(norm) = &self.feature_norm {
            if norm.mean.len() != self.feature_dim || norm.std.len() != self.feature_dim {
                return Err(Error::Dimension("feature norm length".into()));
            }
        }
        Ok(())
    }

    /// Tagged `BSEC` record (tag 2). Layout: scenario id string; counts
    /// `n_samples, feature_dim, n_beams`; a `u8` flag and, when set, the
    /// norm means then stds; the train/val/test index lists (count then
    /// indices); then per sample `user_id, bs_id, label_beam` (u64),
    /// `rate_scale`, features and label rates (f64).
    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        self.validate()?;
        let mut w = container::Writer::new(out);
        let write = |w: &mut container::Writer<W>| -> std::io::Result<()> {
            w.tagged_header(RecordTag::Dataset)?;
            w.str(&self.scenario_id)?;
            w.u64(self.samples.len() as u64)?;
            w.u64(self.feature_dim as u64)?;
            w.u64(self.n_beams as u64)?;
            match &self.feature_norm {
                Some(norm) => {
                    w.u8(1)?;
                    w.f64s(&norm.mean)?;
                    w.f64s(&norm.std)?;
                }
                None => w.u8(0)?,
            }
            for part in [&self.split.train, &self.split.val, &self.split.test] {
                w.u64(part.len() as u64)?;
                w.u64s(part.iter().map(|&i| i as u64))?;
            }
            for s in &self.samples {
                w.u64(s.user_id as u64)?;
                w.u64(s.bs_id as u64)?;
                w.u64(s.label_beam as u64)?;
                w.f64(s.rate_scale)?;
                w.f64s(&s.features)?;
                w.f64s(&s.label_rates)?;
            }
            Ok(())
        };
        write(&mut w).map_err(|e| Error::format("dataset", e.to_string()))
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        const LIMIT: u64 = 1 << 28;
        let mut r = container::Reader::new(input, "dataset");
        r.tagged_header(RecordTag::Dataset)?;
        let scenario_id = r.str()?;
        let n = r.count(LIMIT)?;
        let feature_dim = r.count(LIMIT)?;
        let n_beams = r.count(LIMIT)?;
        let feature_norm = match r.u8()? {
            0 => None,
            1 => Some(FeatureNorm {
                mean: r.f64s(feature_dim)?,
                std: r.f64s(feature_dim)?,
            }),
            f => return Err(Error::format("dataset", format!("bad norm flag {f}"))),
        };
        let mut parts = Vec::with_capacity(3);
        for _ in 0..3 {
            let len = r.count(n as u64)?;
            let idx = (0..len)
                .map(|_| r.count(n as u64))
                .collect::<Result<Vec<_>>>()?;
            parts.push(idx);
        }
        let test = parts.pop().unwrap_or_default();
        let val = parts.pop().unwrap_or_default();
        let train = parts.pop().unwrap_or_default();
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let user_id = r.count(LIMIT)?;
            let bs_id = r.count(LIMIT)?;
            let label_beam = r.count(n_beams as u64)?;
            let rate_scale = r.f64()?;
            let features = r.f64s(feature_dim)?;
            let label_rates = r.f64s(n_beams)?;
            samples.push(Sample {
                features,
                label_rates,
                label_beam,
                user_id,
                bs_id,
                rate_scale,
            });
        }
        r.finish()?;
        let ds = Dataset {
            scenario_id,
            feature_dim,
            n_beams,
            samples,
            feature_norm,
            split: Split { train, val, test },
        };
        ds.validate()?;
        Ok(ds)
    }

    /// CSV with columns `user_id, bs_id, f_0..f_{d-1}, r_0..r_{N-1}, label_beam`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["user_id".to_string(), "bs_id".to_string()];
        header.extend((0..self.feature_dim).map(|i| format!("f_{i}")));
        header.extend((0..self.n_beams).map(|i| format!("r_{i}")));
        header.push("label_beam".into());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![s.user_id.to_string(), s.bs_id.to_string()];
            rec.extend(s.features.iter().map(|v| v.to_string()));
            rec.extend(s.label_rates.iter().map(|v| v.to_string()));
            rec.push(s.label_beam.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}
