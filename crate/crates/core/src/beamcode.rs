//! DFT beam codebook, per-beam achievable rates, beam selection and the
//! effective achievable rate.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::channel::{omni_pattern, TransmitConfig};
use crate::container;
use crate::error::{Error, Result};

/// Unit-norm beam-steering vectors plus the omni receive pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub num_antennas: usize,
    pub n_beams: usize,
    /// Column-major: beam `p` occupies `vectors[p*A .. (p+1)*A]`.
    pub vectors: Vec<Complex64>,
    pub omni: Vec<Complex64>,
}

impl Codebook {
    pub fn beam(&self, p: usize) -> &[Complex64] {
        &self.vectors[p * self.num_antennas..(p + 1) * self.num_antennas]
    }

    /// Dumps the beams as a complex tensor with dims `[1, 1, n_beams, A]`.
    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        container::write_complex_tensor(out, [1, 1, self.n_beams, self.num_antennas], &self.vectors)
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let (dims, vectors) = container::read_complex_tensor(input)?;
        if dims[0] != 1 || dims[1] != 1 || dims[3] == 0 {
            return Err(Error::format("codebook", format!("unexpected dims {dims:?}")));
        }
        Ok(Self {
            num_antennas: dims[3],
            n_beams: dims[2],
            vectors,
            omni: omni_pattern(dims[3]),
        })
    }
}

/// Column `p` is `(1/√A)·exp(-j·2π·a·p/N)`.
pub fn build_dft_codebook(num_antennas: usize, n_beams: usize) -> Result<Codebook> {
    if num_antennas == 0 {
        return Err(Error::Config("codebook needs at least one antenna".into()));
    }
    if n_beams < num_antennas {
        return Err(Error::Config(format!(
            "n_beams = {n_beams} undersamples an array of {num_antennas} antennas"
        )));
    }
    let scale = 1.0 / (num_antennas as f64).sqrt();
    let mut vectors = Vec::with_capacity(num_antennas * n_beams);
    for p in 0..n_beams {
        for a in 0..num_antennas {
            // Reduce a·p mod N first so the phase stays accurate for large grids.
            let m = (a * p) % n_beams;
            vectors.push(Complex64::from_polar(scale, -2.0 * PI * m as f64 / n_beams as f64));
        }
    }
    Ok(Codebook {
        num_antennas,
        n_beams,
        vectors,
        omni: omni_pattern(num_antennas),
    })
}

/// Codebook beam whose steering direction matches a departure angle.
///
/// The channel's array response at angle θ is `exp(-j·2π·a·s·sinθ)`, and
/// `hᵀf_p` peaks when `p/N ≡ -s·sinθ (mod 1)`.
pub fn matched_beam(aod: f64, spacing: f64, n_beams: usize) -> usize {
    let n = n_beams as f64;
    let raw = (-spacing * aod.sin() * n).round();
    raw.rem_euclid(n) as usize % n_beams
}

/// Time constants of the effective achievable rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffRateParams {
    /// Beam-training overhead `T_t`, seconds.
    pub t_train: f64,
    /// Beam coherence time `T_B`, seconds.
    pub t_beam_coherence: f64,
    /// Channel coherence time `T_C`, seconds. Reported only.
    pub t_channel_coherence: f64,
    pub snr_linear: f64,
}

impl EffRateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_beam_coherence > 0.0 && self.t_beam_coherence.is_finite()) {
            return Err(Error::Config(format!(
                "t_beam_coherence must be positive, got {}",
                self.t_beam_coherence
            )));
        }
        if !(self.t_train >= 0.0 && self.t_train <= self.t_beam_coherence) {
            return Err(Error::Config(format!(
                "t_train = {} must lie in [0, t_beam_coherence]",
                self.t_train
            )));
        }
        if !(self.snr_linear >= 0.0 && self.snr_linear.is_finite()) {
            return Err(Error::Config("snr_linear must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Fraction of the beam coherence time left for data, `1 - T_t/T_B`.
    pub fn prefactor(&self) -> f64 {
        1.0 - self.t_train / self.t_beam_coherence
    }
}

fn check_slice(slice: &[Complex64], num_antennas: usize) -> Result<usize> {
    if num_antennas == 0 || slice.is_empty() || slice.len() % num_antennas != 0 {
        return Err(Error::Dimension(format!(
            "channel slice of {} entries is not K × {num_antennas}",
            slice.len()
        )));
    }
    Ok(slice.len() / num_antennas)
}

fn check_snr(snr_linear: f64) -> Result<()> {
    if !(snr_linear >= 0.0 && snr_linear.is_finite()) {
        return Err(Error::Config(format!("snr_linear must be finite and >= 0, got {snr_linear}")));
    }
    Ok(())
}

/// Per-beam rate `(1/K)·Σ_k log2(1 + SNR·|h_kᵀ f_p|²)` for a `K × A`
/// row-major channel slice.
pub fn beam_rates(slice: &[Complex64], codebook: &Codebook, snr_linear: f64) -> Result<Vec<f64>> {
    let k_total = check_slice(slice, codebook.num_antennas)?;
    check_snr(snr_linear)?;
    let a_total = codebook.num_antennas;
    let mut rates = vec![0.0; codebook.n_beams];
    for row in slice.chunks_exact(a_total) {
        for (p, r) in rates.iter_mut().enumerate() {
            let f = codebook.beam(p);
            let mut gain = Complex64::new(0.0, 0.0);
            for (h, w) in row.iter().zip(f) {
                gain += h * w;
            }
            *r += (snr_linear * gain.norm_sqr()).ln_1p();
        }
    }
    let scale = 1.0 / (k_total as f64 * std::f64::consts::LN_2);
    rates.iter_mut().for_each(|r| *r *= scale);
    Ok(rates)
}

/// FFT evaluation of [`beam_rates`] for DFT codebooks.
///
/// `hᵀf_p = (1/√A)·Σ_a h[a]·exp(-j·2π·a·p/N)` is the N-point DFT of the
/// zero-padded channel row, so all beams of one subcarrier cost one FFT.
pub struct DftRates {
    num_antennas: usize,
    n_beams: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl DftRates {
    pub fn new(num_antennas: usize, n_beams: usize) -> Result<Self> {
        if num_antennas == 0 || n_beams < num_antennas {
            return Err(Error::Config(format!(
                "invalid DFT grid: {num_antennas} antennas, {n_beams} beams"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(n_beams);
        Ok(Self {
            num_antennas,
            n_beams,
            fft,
        })
    }

    pub fn rates(&self, slice: &[Complex64], snr_linear: f64) -> Result<Vec<f64>> {
        let k_total = check_slice(slice, self.num_antennas)?;
        check_snr(snr_linear)?;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_beams];
        let mut rates = vec![0.0; self.n_beams];
        let gain_scale = snr_linear / self.num_antennas as f64;
        for row in slice.chunks_exact(self.num_antennas) {
            buf[..self.num_antennas].copy_from_slice(row);
            buf[self.num_antennas..].fill(Complex64::new(0.0, 0.0));
            self.fft.process(&mut buf);
            for (r, z) in rates.iter_mut().zip(&buf) {
                *r += (gain_scale * z.norm_sqr()).ln_1p();
            }
        }
        let scale = 1.0 / (k_total as f64 * std::f64::consts::LN_2);
        rates.iter_mut().for_each(|r| *r *= scale);
        Ok(rates)
    }
}

/// Index of the largest rate, lowest index on ties.
pub fn optimal_beam(rates: &[f64]) -> Result<usize> {
    if rates.is_empty() {
        return Err(Error::Dimension("optimal_beam on an empty rate vector".into()));
    }
    if rates.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("rate vector contains NaN or infinity".into()));
    }
    let mut best = 0;
    for (i, &r) in rates.iter().enumerate().skip(1) {
        if r > rates[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Effective achievable rate
/// `(1 - T_t/T_B)·Σ_k log2(1 + SNR·|Σ_x h_{k,x}ᵀ f_x v_{k,x}|²)`.
///
/// `channel[x]` is the `K × A` slice of BS `x`; `rf_beams[x]` its beam.
pub fn effective_rate(
    params: &EffRateParams,
    channel: &[&[Complex64]],
    rf_beams: &[&[Complex64]],
    tx: &TransmitConfig,
) -> Result<f64> {
    params.validate()?;
    let x_total = channel.len();
    if x_total == 0 || rf_beams.len() != x_total {
        return Err(Error::Dimension(format!(
            "{} channel slices but {} RF beams",
            x_total,
            rf_beams.len()
        )));
    }
    let a_total = rf_beams[0].len();
    let k_total = check_slice(channel[0], a_total)?;
    for (h, f) in channel.iter().zip(rf_beams) {
        if f.len() != a_total || h.len() != k_total * a_total {
            return Err(Error::Dimension("ragged per-BS channel or beam".into()));
        }
    }
    tx.validate(k_total, x_total)?;
    let mut sum = 0.0;
    for k in 0..k_total {
        let mut g = Complex64::new(0.0, 0.0);
        for x in 0..x_total {
            let row = &channel[x][k * a_total..(k + 1) * a_total];
            let mut hf = Complex64::new(0.0, 0.0);
            for (h, f) in row.iter().zip(rf_beams[x]) {
                hf += h * f;
            }
            g += hf * tx.precoders[k][x];
        }
        sum += (params.snr_linear * g.norm_sqr()).ln_1p();
    }
    Ok(params.prefactor() * sum / std::f64::consts::LN_2)
}

/// [`effective_rate`] for one BS transmitting alone with `v_k = 1`.
pub fn single_bs_effective_rate(params: &EffRateParams, slice: &[Complex64], beam: &[Complex64]) -> Result<f64> {
    let k_total = check_slice(slice, beam.len())?;
    let tx = TransmitConfig {
        pilot: vec![Complex64::new(1.0, 0.0); k_total],
        precoders: vec![vec![Complex64::new(1.0, 0.0)]; k_total],
        rf_layout: crate::channel::BlockDiagonalRf {
            num_bs: 1,
            num_antennas: beam.len(),
        },
    };
    effective_rate(params, &[slice], &[beam], &tx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_slice(rng: &mut SplitMix64, n: usize) -> Vec<Complex64> {
        (0..n).map(|_| rng.complex_normal(1.0)).collect()
    }

    #[test]
    fn trivial_codebooks() {
        let c = build_dft_codebook(1, 1).unwrap();
        assert_eq!(c.vectors, vec![Complex64::new(1.0, 0.0)]);
        let c = build_dft_codebook(2, 2).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((c.beam(0)[0] - r).norm() < 1e-15 && (c.beam(0)[1] - r).norm() < 1e-15);
        assert!((c.beam(1)[0] - r).norm() < 1e-15 && (c.beam(1)[1] + r).norm() < 1e-15);
        assert!(build_dft_codebook(4, 2).is_err());
    }

    #[test]
    fn gram_of_default_codebook() {
        let c = build_dft_codebook(32, 512).unwrap();
        let mut max_off: f64 = 0.0;
        for p in 0..512 {
            for q in p..512 {
                let g: Complex64 = c.beam(p).iter().zip(c.beam(q)).map(|(a, b)| a.conj() * b).sum();
                if p == q {
                    assert!((g.re - 1.0).abs() < 1e-12 && g.im.abs() < 1e-12);
                } else {
                    max_off = max_off.max(g.norm());
                }
            }
        }
        assert!(max_off < 1.0);
    }

    #[test]
    fn unit_rate_and_zero_snr() {
        let c = build_dft_codebook(1, 1).unwrap();
        let r = beam_rates(&[Complex64::new(1.0, 0.0)], &c, 1.0).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-15);
        let c = build_dft_codebook(4, 8).unwrap();
        let mut rng = SplitMix64::new(1);
        let h = random_slice(&mut rng, 8);
        assert!(beam_rates(&h, &c, 0.0).unwrap().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn fft_rates_match_direct() {
        let mut rng = SplitMix64::new(2);
        for &(a, n) in &[(4, 8), (32, 512), (5, 7)] {
            let c = build_dft_codebook(a, n).unwrap();
            let h = random_slice(&mut rng, 3 * a);
            let direct = beam_rates(&h, &c, 3.0).unwrap();
            let fast = DftRates::new(a, n).unwrap().rates(&h, 3.0).unwrap();
            for (x, y) in direct.iter().zip(&fast) {
                assert!((x - y).abs() < 1e-10, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn argmax_ties_and_errors() {
        assert_eq!(optimal_beam(&[0.1, 0.9, 0.3]).unwrap(), 1);
        assert_eq!(optimal_beam(&[0.5, 0.5]).unwrap(), 0);
        assert!(optimal_beam(&[]).is_err());
        assert!(optimal_beam(&[0.1, f64::NAN]).is_err());
    }

    #[test]
    fn effective_rate_trivial_cases() {
        let one = [Complex64::new(1.0, 0.0)];
        let p = EffRateParams {
            t_train: 0.0,
            t_beam_coherence: 1.0,
            t_channel_coherence: 1.0,
            snr_linear: 1.0,
        };
        assert!((single_bs_effective_rate(&p, &one, &one).unwrap() - 1.0).abs() < 1e-15);
        let full = EffRateParams { t_train: 1.0, ..p };
        assert_eq!(single_bs_effective_rate(&full, &one, &one).unwrap(), 0.0);
        let bad = EffRateParams { t_beam_coherence: 0.0, ..p };
        assert!(single_bs_effective_rate(&bad, &one, &one).is_err());
    }

    #[test]
    fn matched_beam_wraps_negative_angles() {
        assert_eq!(matched_beam(0.0, 0.5, 64), 0);
        // sinθ = 1/32 → p = -1 mod 64.
        assert_eq!(matched_beam((1.0f64 / 32.0).asin(), 0.5, 64), 63);
    }

    #[test]
    fn codebook_dump_round_trips() {
        let c = build_dft_codebook(4, 8).unwrap();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(Codebook::read_from(&buf[..]).unwrap(), c);
    }
}
