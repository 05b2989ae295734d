//! Seeded random streams.
//!
//! Every consumer derives its own ChaCha stream from `(seed, stream)` so that
//! independent pieces of work (dataset indices, training phases) never share
//! state and can be reordered or parallelized without changing results.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Well-known stream identifiers. Per-sample streams use the sample index
/// directly, so these sit in the upper half of the stream space.
pub mod streams {
    pub const LABELS: u64 = 1 << 63;
    pub const SHUFFLE: u64 = LABELS + 1;
    pub const INIT: u64 = LABELS + 2;
    pub const SYNTH: u64 = LABELS + 3;
    pub const ADVERSARY: u64 = LABELS + 4;
    pub const CONSISTENCY: u64 = LABELS + 5;
    pub const GAN: u64 = LABELS + 6;
    pub const EVAL: u64 = LABELS + 7;
}

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner, spare_normal: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        // Lemire's multiply-shift; bias is below 2^-32 for the sizes used here.
        ((u128::from(self.inner.next_u64()) * n as u128) >> 64) as usize
    }

    /// Standard normal via the Box-Muller transform.
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare_normal.take() {
            return v;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare_normal = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Index drawn from a discrete distribution given by non-negative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.len() - 1
    }
}

/// Mixes a seed with an auxiliary value into a fresh seed.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
