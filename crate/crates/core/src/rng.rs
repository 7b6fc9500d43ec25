//! Counter-addressable normal draws.
//!
//! Every path owns a ChaCha8 stream (`stream = path id`); draws inside a path
//! are laid out node-major then coordinate, so the `j`-th coordinate of the
//! increment at node `i` is word `2 (i d + j)` of that stream. Results do not
//! depend on how paths are split across workers.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc_inv;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

pub struct PathRng {
    inner: ChaCha8Rng,
}

impl PathRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        PathRng { inner }
    }

    /// Positioned so the next draw is the `draw`-th of the stream.
    pub fn at(seed: u64, stream: u64, draw: u64) -> Self {
        let mut r = Self::new(seed, stream);
        r.inner.set_word_pos(2 * draw as u128);
        r
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
    }

    pub fn normal(&mut self) -> f64 {
        normal_quantile(self.uniform())
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

/// Standard normal quantile.
pub fn normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// SplitMix64 finaliser; used to derive independent seeds for auxiliary
/// streams (bootstrap, nested simulation) from the experiment seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
