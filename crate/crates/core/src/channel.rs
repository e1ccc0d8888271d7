//! Synthetic geometric multipath channels and omni-received pilot features.
//!
//! Geometry: every base station carries a uniform linear array laid along
//! the x axis with boresight along +y. The azimuth angle of departure toward
//! a point is `atan2(dx, dy)`, so a user straight ahead of the array sits at
//! angle 0. Heights only enter through the path length.
//!
//! Each `(user, bs)` link gets `num_paths` paths drawn from its own seeded
//! stream (see [`crate::rng::link_seed`]):
//!
//! * path 0 is the line-of-sight path: geometric angle, delay `distance / c`;
//! * paths `1..P` add a uniform cluster offset in `[-π/6, π/6)` to the
//!   geometric angle and a uniform excess delay in `(0, 100 ns]`; excess
//!   delays are sorted so delays ascend with the path index;
//! * gains are circular complex Gaussian with `E|α_p|^2 ∝ exp(-p/2)`,
//!   drawn with `Σ_p E|α_p|^2 = 1`, then rescaled by one scenario-wide
//!   factor so the mean assembled channel power per link is exactly 1.
//!
//! Per-link draw order: `P-1` angle offsets, `P-1` excess delays, then `P`
//! complex gains (one Box–Muller pair each).

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, link_seed, SplitMix64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Half-width of the uniform angular cluster spread around the LoS angle.
pub const CLUSTER_SPREAD_RAD: f64 = PI / 6.0;

/// Upper bound on the excess delay of non-LoS paths.
pub const MAX_EXCESS_DELAY_S: f64 = 100e-9;

/// Decay rate of the per-path power profile `exp(-p * POWER_DECAY)`.
pub const POWER_DECAY: f64 = 0.5;

fn default_spacing() -> f64 {
    0.5
}

fn default_paths() -> usize {
    5
}

fn default_bandwidth() -> f64 {
    0.5
}

/// Rectangular grid of user positions, laid out row-major (rows along y,
/// columns along x), all at height `height`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserGrid {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub height: f64,
}

impl UserGrid {
    fn axis(range: [f64; 2], n: usize, i: usize) -> f64 {
        if n <= 1 {
            range[0]
        } else {
            range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64
        }
    }

    /// Position of user `index` (row-major over `rows × cols`).
    pub fn position(&self, index: usize) -> [f64; 3] {
        let r = index / self.cols.max(1);
        let c = index % self.cols.max(1);
        [
            Self::axis(self.x_range, self.cols, c),
            Self::axis(self.y_range, self.rows, r),
            self.height,
        ]
    }
}

/// Experiment geometry and radio parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario_id: String,
    pub num_bs: usize,
    pub num_antennas: usize,
    /// Element spacing in wavelengths.
    #[serde(default = "default_spacing")]
    pub antenna_spacing: f64,
    pub num_subcarriers: usize,
    #[serde(default = "default_paths")]
    pub num_paths: usize,
    pub num_users: usize,
    pub user_grid: UserGrid,
    pub bs_positions: Vec<[f64; 3]>,
    pub snr_db: f64,
    /// Receiver noise variance σ² (linear).
    pub noise_variance: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_ghz: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_users == 0 {
            return bad("num_users must be at least 1".into());
        }
        if self.num_bs == 0 || self.num_antennas == 0 || self.num_subcarriers == 0 {
            return bad("num_bs, num_antennas and num_subcarriers must be at least 1".into());
        }
        if self.num_paths == 0 {
            return bad("num_paths must be at least 1".into());
        }
        if !(self.antenna_spacing > 0.0 && self.antenna_spacing.is_finite()) {
            return bad(format!("antenna_spacing must be positive, got {}", self.antenna_spacing));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return bad(format!("noise_variance must be >= 0, got {}", self.noise_variance));
        }
        if !(self.bandwidth_ghz > 0.0 && self.bandwidth_ghz.is_finite()) {
            return bad(format!("bandwidth_ghz must be positive, got {}", self.bandwidth_ghz));
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db must be finite".into());
        }
        if self.user_grid.rows * self.user_grid.cols != self.num_users {
            return bad(format!(
                "user_grid is {}x{} but num_users = {}",
                self.user_grid.rows, self.user_grid.cols, self.num_users
            ));
        }
        if self.bs_positions.len() != self.num_bs {
            return bad(format!(
                "{} bs_positions given for num_bs = {}",
                self.bs_positions.len(),
                self.num_bs
            ));
        }
        let finite = |p: &[f64]| p.iter().all(|v| v.is_finite());
        if !self.bs_positions.iter().all(|p| finite(p))
            || !finite(&self.user_grid.x_range)
            || !finite(&self.user_grid.y_range)
            || !self.user_grid.height.is_finite()
        {
            return bad("positions must be finite".into());
        }
        Ok(())
    }

    /// Sampling period in seconds, `1 / bandwidth`.
    pub fn sampling_period(&self) -> f64 {
        1.0 / (self.bandwidth_ghz * 1e9)
    }

    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }

    pub fn user_position(&self, user: usize) -> [f64; 3] {
        self.user_grid.position(user)
    }

    /// Length of the omni feature vector, `2 · X · K`.
    pub fn feature_dim(&self) -> usize {
        2 * self.num_bs * self.num_subcarriers
    }
}

/// Paths of a single `(user, bs)` link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkPaths {
    pub gains: Vec<Complex64>,
    /// Azimuth angles of departure, radians.
    pub aod: Vec<f64>,
    /// Delays, seconds, ascending.
    pub delays: Vec<f64>,
}

/// Paths of every link, indexed `user * num_bs + bs`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub num_users: usize,
    pub num_bs: usize,
    pub num_paths: usize,
    pub links: Vec<LinkPaths>,
}

impl PathSet {
    pub fn link(&self, user: usize, bs: usize) -> &LinkPaths {
        &self.links[user * self.num_bs + bs]
    }
}

/// Normalized power profile: `exp(-p/2) / Σ_q exp(-q/2)`.
pub fn power_profile(num_paths: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..num_paths).map(|p| (-(p as f64) * POWER_DECAY).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Azimuth angle of departure from `bs` toward `user` and the 3-D distance.
pub fn los_geometry(bs: [f64; 3], user: [f64; 3]) -> (f64, f64) {
    let dx = user[0] - bs[0];
    let dy = user[1] - bs[1];
    let dz = user[2] - bs[2];
    let aod = if dx == 0.0 && dy == 0.0 { 0.0 } else { dx.atan2(dy) };
    (aod, (dx * dx + dy * dy + dz * dz).sqrt())
}

/// `(1/(K·A))·Σ_{k,a} |h[k][a]|²` of the channel a link assembles to.
fn link_power(link: &LinkPaths, scenario: &ScenarioConfig) -> f64 {
    let (k_total, a_total) = (scenario.num_subcarriers, scenario.num_antennas);
    let period = k_total as f64 * scenario.sampling_period();
    let mut total = 0.0;
    for k in 0..k_total {
        for a in 0..a_total {
            let mut h = Complex64::new(0.0, 0.0);
            for ((g, &t), &tau) in link.gains.iter().zip(&link.aod).zip(&link.delays) {
                let phase = -2.0 * PI * (a as f64 * scenario.antenna_spacing * t.sin() + k as f64 * tau / period);
                h += g * Complex64::from_polar(1.0, phase);
            }
            total += h.norm_sqr();
        }
    }
    total / (k_total * a_total) as f64
}

/// Paths of every (user, BS) link. Gains are drawn with the decaying power
/// profile, then all of them are scaled by one common factor so that the
/// mean over links of the assembled channel power is exactly 1.
pub fn generate_paths(scenario: &ScenarioConfig) -> Result<PathSet> {
    scenario.validate()?;
    let p = scenario.num_paths;
    let profile = power_profile(p);
    let mut links = Vec::with_capacity(scenario.num_users * scenario.num_bs);
    for user in 0..scenario.num_users {
        let upos = scenario.user_position(user);
        for (bs, &bpos) in scenario.bs_positions.iter().enumerate() {
            let (los, distance) = los_geometry(bpos, upos);
            if distance == 0.0 {
                return Err(Error::Config(format!(
                    "user {user} coincides with bs {bs}; the path model needs a nonzero distance"
                )));
            }
            let mut rng = SplitMix64::new(link_seed(scenario.seed, user, bs));
            let mut aod = Vec::with_capacity(p);
            aod.push(los);
            for _ in 1..p {
                aod.push(los + rng.uniform(-CLUSTER_SPREAD_RAD, CLUSTER_SPREAD_RAD));
            }
            let mut excess: Vec<f64> = (1..p)
                .map(|_| MAX_EXCESS_DELAY_S * (1.0 - rng.next_f64()))
                .collect();
            excess.sort_by(f64::total_cmp);
            let base = distance / SPEED_OF_LIGHT;
            let mut delays = Vec::with_capacity(p);
            delays.push(base);
            delays.extend(excess.iter().map(|e| base + e));
            let gains = profile.iter().map(|&w| rng.complex_normal(w)).collect();
            links.push(LinkPaths { gains, aod, delays });
        }
    }
    // One common scale so the mean per-link channel power is exactly 1.
    let mean = links.iter().map(|l| link_power(l, scenario)).sum::<f64>() / links.len() as f64;
    if mean > 0.0 && mean.is_finite() {
        let c = 1.0 / mean.sqrt();
        for l in &mut links {
            l.gains.iter_mut().for_each(|g| *g *= c);
        }
    }
    Ok(PathSet {
        num_users: scenario.num_users,
        num_bs: scenario.num_bs,
        num_paths: p,
        links,
    })
}

/// Complex channel coefficients `h[user][bs][subcarrier][antenna]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    /// `(num_users, num_bs, num_subcarriers, num_antennas)`.
    pub dims: [usize; 4],
    pub data: Vec<Complex64>,
}

impl ChannelTensor {
    pub fn num_users(&self) -> usize {
        self.dims[0]
    }

    pub fn num_bs(&self) -> usize {
        self.dims[1]
    }

    pub fn num_subcarriers(&self) -> usize {
        self.dims[2]
    }

    pub fn num_antennas(&self) -> usize {
        self.dims[3]
    }

    /// The `K × A` row-major block of one link.
    pub fn link(&self, user: usize, bs: usize) -> &[Complex64] {
        let block = self.dims[2] * self.dims[3];
        let start = (user * self.dims[1] + bs) * block;
        &self.data[start..start + block]
    }

    pub fn get(&self, user: usize, bs: usize, k: usize, a: usize) -> Complex64 {
        self.link(user, bs)[k * self.dims[3] + a]
    }

    pub fn check_against(&self, scenario: &ScenarioConfig) -> Result<()> {
        let want = [
            scenario.num_users,
            scenario.num_bs,
            scenario.num_subcarriers,
            scenario.num_antennas,
        ];
        if self.dims != want {
            return Err(Error::Dimension(format!(
                "channel dims {:?} do not match scenario {:?}",
                self.dims, want
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        container::write_complex_tensor(out, self.dims, &self.data)
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let (dims, data) = container::read_complex_tensor(input)?;
        Ok(Self { dims, data })
    }
}

/// Array response `exp(-j·2π·a·spacing·sin(aod))` for `a = 0..A`.
pub fn steering_vector(num_antennas: usize, spacing: f64, aod: f64) -> Vec<Complex64> {
    let s = aod.sin();
    (0..num_antennas)
        .map(|a| Complex64::from_polar(1.0, -2.0 * PI * a as f64 * spacing * s))
        .collect()
}

pub fn assemble_channel(paths: &PathSet, scenario: &ScenarioConfig) -> Result<ChannelTensor> {
    scenario.validate()?;
    if paths.num_users != scenario.num_users
        || paths.num_bs != scenario.num_bs
        || paths.links.len() != paths.num_users * paths.num_bs
    {
        return Err(Error::Dimension(
            "path set does not match scenario user/bs counts".into(),
        ));
    }
    let k_total = scenario.num_subcarriers;
    let a_total = scenario.num_antennas;
    let period = k_total as f64 * scenario.sampling_period();
    let mut data = Vec::with_capacity(paths.links.len() * k_total * a_total);
    for link in &paths.links {
        if link.gains.len() != link.aod.len() || link.gains.len() != link.delays.len() {
            return Err(Error::Dimension("ragged path entries".into()));
        }
        let spatial: Vec<Vec<Complex64>> = link
            .aod
            .iter()
            .map(|&t| steering_vector(a_total, scenario.antenna_spacing, t))
            .collect();
        for k in 0..k_total {
            // Per-path complex weight on this subcarrier.
            let weights: Vec<Complex64> = link
                .gains
                .iter()
                .zip(&link.delays)
                .map(|(&g, &tau)| g * Complex64::from_polar(1.0, -2.0 * PI * k as f64 * tau / period))
                .collect();
            for a in 0..a_total {
                let mut h = Complex64::new(0.0, 0.0);
                for (w, sv) in weights.iter().zip(&spatial) {
                    h += w * sv[a];
                }
                data.push(h);
            }
        }
    }
    let tensor = ChannelTensor {
        dims: [scenario.num_users, scenario.num_bs, k_total, a_total],
        data,
    };
    if !tensor.is_finite() {
        return Err(Error::NonFinite("assembled channel".into()));
    }
    Ok(tensor)
}

/// Structure of the RF precoder `F^R`: one A-element beam per BS on the
/// block diagonal of an `XA × X` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDiagonalRf {
    pub num_bs: usize,
    pub num_antennas: usize,
}

impl BlockDiagonalRf {
    /// Dense `XA × X` RF precoder (row-major) with `beams[x]` in block `x`.
    pub fn matrix(&self, beams: &[&[Complex64]]) -> Result<Vec<Complex64>> {
        if beams.len() != self.num_bs || beams.iter().any(|b| b.len() != self.num_antennas) {
            return Err(Error::Dimension(format!(
                "expected {} beams of length {}",
                self.num_bs, self.num_antennas
            )));
        }
        let (x_total, a_total) = (self.num_bs, self.num_antennas);
        let mut m = vec![Complex64::new(0.0, 0.0); x_total * a_total * x_total];
        for (x, beam) in beams.iter().enumerate() {
            for (a, &f) in beam.iter().enumerate() {
                m[(x * a_total + a) * x_total + x] = f;
            }
        }
        Ok(m)
    }
}

/// Pilot symbols and digital precoders.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitConfig {
    /// `sg_k`, one per subcarrier.
    pub pilot: Vec<Complex64>,
    /// `v_k`, one unit-norm length-X vector per subcarrier.
    pub precoders: Vec<Vec<Complex64>>,
    pub rf_layout: BlockDiagonalRf,
}

impl TransmitConfig {
    /// All-ones pilot and equal-weight precoders `v_k = 1/√X`.
    pub fn default_for(scenario: &ScenarioConfig) -> Self {
        let x = scenario.num_bs;
        let w = Complex64::new(1.0 / (x as f64).sqrt(), 0.0);
        Self {
            pilot: vec![Complex64::new(1.0, 0.0); scenario.num_subcarriers],
            precoders: vec![vec![w; x]; scenario.num_subcarriers],
            rf_layout: BlockDiagonalRf {
                num_bs: x,
                num_antennas: scenario.num_antennas,
            },
        }
    }

    pub fn validate(&self, num_subcarriers: usize, num_bs: usize) -> Result<()> {
        if self.pilot.len() != num_subcarriers || self.precoders.len() != num_subcarriers {
            return Err(Error::Dimension(format!(
                "pilot/precoders must have {num_subcarriers} entries"
            )));
        }
        for (k, v) in self.precoders.iter().enumerate() {
            if v.len() != num_bs {
                return Err(Error::Dimension(format!("precoder {k} has {} entries", v.len())));
            }
            let n: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("precoder {k} has squared norm {n}, need 1")));
            }
        }
        if self.rf_layout.num_bs != num_bs {
            return Err(Error::Dimension("rf layout BS count mismatch".into()));
        }
        Ok(())
    }
}

/// Equal-weight unit-norm omni pattern `(1/√A)·1`.
pub fn omni_pattern(num_antennas: usize) -> Vec<Complex64> {
    vec![Complex64::new(1.0 / (num_antennas as f64).sqrt(), 0.0); num_antennas]
}

/// Omni-received pilot features, one row of length `2·X·K` per user.
///
/// Row layout, frozen: BS blocks of `2K` values in BS order; inside a block
/// the K real parts (subcarrier order) precede the K imaginary parts.
///
/// Noise for user `u` comes from stream `derive_seed(noise_seed, u)`, one
/// complex draw per `(bs, subcarrier)` in BS-major order. It is drawn even
/// when σ² = 0, so the stream position never depends on the noise level.
pub fn omni_receive(
    channel: &ChannelTensor,
    tx: &TransmitConfig,
    scenario: &ScenarioConfig,
    noise_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    channel.check_against(scenario)?;
    let (x_total, k_total, a_total) = (scenario.num_bs, scenario.num_subcarriers, scenario.num_antennas);
    tx.validate(k_total, x_total)?;
    let omni = omni_pattern(a_total);
    let mut rows = Vec::with_capacity(scenario.num_users);
    for user in 0..scenario.num_users {
        let mut rng = SplitMix64::new(derive_seed(noise_seed, user as u64));
        let mut row = vec![0.0; 2 * x_total * k_total];
        for bs in 0..x_total {
            let link = channel.link(user, bs);
            let block = &mut row[2 * k_total * bs..2 * k_total * (bs + 1)];
            for k in 0..k_total {
                let h = &link[k * a_total..(k + 1) * a_total];
                let mut ho = Complex64::new(0.0, 0.0);
                for (hv, ov) in h.iter().zip(&omni) {
                    ho += hv * ov;
                }
                let noise = rng.complex_normal(scenario.noise_variance);
                let g = ho * tx.precoders[k][bs] * tx.pilot[k] + noise;
                block[k] = g.re;
                block[k_total + k] = g.im;
            }
        }
        rows.push(row);
    }
    Ok(rows)
}
