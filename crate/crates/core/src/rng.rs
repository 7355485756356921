//! Deterministic random streams.
//!
//! Every random draw in the crate comes from a [`Stream`]: a xoshiro256++
//! generator (`rand_xoshiro::Xoshiro256PlusPlus`, state filled from a 64-bit
//! seed by SplitMix64) with two fixed conversions on top of it:
//!
//! - uniform `[0, 1)`: `(next_u64 >> 11) * 2^-53`;
//! - standard normal: polar Box–Muller. Draw `u = 2U₁ − 1`, `v = 2U₂ − 1`
//!   until `0 < s = u² + v² < 1`, then return `u·f` and cache `v·f` for the
//!   next call, where `f = sqrt(−2 ln s / s)`.
//!
//! Child seeds are derived with [`split_seed`], so that substreams for
//! replications and voxels never depend on scheduling order.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed of child stream `index` from `seed`.
///
/// `split_seed(s, i) = mix64(s ^ mix64((i + 1) · γ))` with `γ` the SplitMix64
/// golden-ratio increment.
pub fn split_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

#[derive(Debug, Clone)]
pub struct Stream {
    rng: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Child stream `index` of `seed`.
    pub fn child(seed: u64, index: u64) -> Self {
        Self::new(split_seed(seed, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }

    pub fn normal_with(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.normal()
    }
}
