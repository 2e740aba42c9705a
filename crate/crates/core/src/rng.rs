//! Deterministic random number generation.
//!
//! A thin wrapper over a counter-based stream cipher generator so that the
//! same seed produces the same stream on every platform. Sub-streams are
//! derived by mixing tag words into the seed, which keeps per-sample /
//! per-epoch draws independent of iteration order.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

/// splitmix64 finalizer, used to mix tag words into derived seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent sub-stream identified by `tags` (e.g. [epoch, sample]).
    pub fn derive(seed: u64, tags: &[u64]) -> Self {
        let mut s = mix(seed);
        for &t in tags {
            s = mix(s ^ t.wrapping_mul(0xd6e8_feb8_6659_fd93));
        }
        Self::seed_from_u64(s)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below needs n > 0");
        self.inner.gen_range(0..n)
    }

    pub fn coin(&mut self) -> bool {
        self.inner.gen::<bool>()
    }

    /// Fisher-Yates shuffle of indices 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }

    /// Serializable stream position (seed is tracked by the caller).
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn set_word_pos(&mut self, pos: u128) {
        self.inner.set_word_pos(pos);
    }
}
