//! Seeded PCG64 streams.
//!
//! Every consumer of randomness gets its own stream, identified by a root seed
//! and a purpose label. The label selects the PCG stream increment, so streams
//! with different labels never overlap.

use rand::seq::SliceRandom;
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamLabel {
    Init,
    Dropout,
    Augment,
    Shuffle,
    Synth,
}

impl StreamLabel {
    fn id(self) -> u128 {
        match self {
            StreamLabel::Init => 1,
            StreamLabel::Dropout => 2,
            StreamLabel::Augment => 3,
            StreamLabel::Shuffle => 4,
            StreamLabel::Synth => 5,
        }
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic 64-bit hash of a seed and an index, used to derive child
/// seeds (per run, per patient).
pub fn hash64(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

#[derive(Debug, Clone)]
pub struct RngStream {
    rng: Pcg64,
    root_seed: u64,
    label: StreamLabel,
}

impl RngStream {
    pub fn new(root_seed: u64, label: StreamLabel) -> Self {
        let hi = hash64(root_seed, 0) as u128;
        let lo = hash64(root_seed, 1) as u128;
        Self {
            rng: Pcg64::new((hi << 64) | lo, label.id()),
            root_seed,
            label,
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn label(&self) -> StreamLabel {
        self.label
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform01(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal01(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform integer in the closed range `[lo, hi]`.
    pub fn int_range(&mut self, lo: i64, hi: i64) -> Result<i64> {
        if lo > hi {
            return Err(Error::InvalidRange { lo, hi });
        }
        Ok(self.rng.random_range(lo..=hi))
    }

    /// Uniformly random permutation of `0..n` (Fisher-Yates).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut self.rng);
        p
    }
}
