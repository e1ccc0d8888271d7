//! Deterministic random streams.
//!
//! Every stochastic quantity in the crate (path parameters, receiver noise,
//! dropout masks, shuffles, attack starts, privacy noise) is drawn from a
//! [`SplitMix64`] stream. Child streams are keyed with [`derive_seed`], so a
//! unit of work only ever consumes its own stream and results do not depend
//! on evaluation order. Gaussians use the Box–Muller transform; both the
//! generator and the transform are simple enough to replay bit-for-bit in
//! any language.

use std::f64::consts::PI;

use num_complex::Complex64;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function. A bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of child `index` under `seed`.
///
/// For a fixed parent this is a bijection in `index`, so distinct children
/// never share a stream.
#[inline]
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_mul(GOLDEN_GAMMA).wrapping_add(GOLDEN_GAMMA)))
}

/// Seed for the `(user, bs)` link of a scenario.
#[inline]
pub fn link_seed(seed: u64, user: usize, bs: usize) -> u64 {
    derive_seed(derive_seed(seed, user as u64), bs as u64)
}

/// Well-known stream labels, mixed into a parent seed with [`derive_seed`].
pub mod stream {
    pub const RECEIVER_NOISE: u64 = 0x6e_6f69_7365;
    pub const SPLIT: u64 = 0x73_706c_6974;
    pub const INIT: u64 = 0x696e_6974;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const DROPOUT: u64 = 0x6472_6f70;
    pub const ATTACK: u64 = 0x6174_7461_636b;
    pub const PRIVACY: u64 = 0x7072_6976;
}

/// SplitMix64 pseudo-random generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
    spare: Option<f64>,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed,
            spare: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in `0..n` (Lemire's multiply-shift; bias < 2^-64 · n).
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// One Box–Muller pair of independent standard normals.
    ///
    /// `u1` is taken from `(0, 1]` so the logarithm is always finite.
    #[inline]
    pub fn box_muller(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Standard normal. Consumes Box–Muller pairs, returning the cosine
    /// branch first and the sine branch on the following call.
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (z0, z1) = self.box_muller();
        self.spare = Some(z1);
        z0
    }

    /// Circularly-symmetric complex Gaussian with `E|z|^2 = variance`.
    /// Always consumes exactly one fresh Box–Muller pair.
    #[inline]
    pub fn complex_normal(&mut self, variance: f64) -> Complex64 {
        let (z0, z1) = self.box_muller();
        let s = (variance / 2.0).sqrt();
        Complex64::new(s * z0, s * z1)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // Reference outputs of SplitMix64 seeded with 0.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn derive_seed_is_injective_over_small_range() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..10_000u64 {
            assert!(seen.insert(derive_seed(42, i)));
        }
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..10_000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = SplitMix64::new(11);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn complex_normal_power() {
        let mut rng = SplitMix64::new(5);
        let n = 100_000;
        let p: f64 = (0..n).map(|_| rng.complex_normal(0.3).norm_sqr()).sum::<f64>() / n as f64;
        assert!((p - 0.3).abs() < 0.01, "power {p}");
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut rng = SplitMix64::new(9);
        let mut v: Vec<usize> = (0..257).collect();
        rng.shuffle(&mut v);
        let mut s = v.clone();
        s.sort_unstable();
        assert_eq!(s, (0..257).collect::<Vec<_>>());
        assert_ne!(v, s);
    }
}
