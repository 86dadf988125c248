//! Seeded, labeled random streams.
//!
//! Every consumer of randomness (each parameter init, the dataset split,
//! each epoch's batch order) gets its own stream keyed by `(seed, label)`,
//! so adding or removing one consumer never shifts the draws of another.
//! The generator is ChaCha8, a counter-based stream cipher; its name is
//! recorded in checkpoint and metrics headers.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;

/// Name of the generator, recorded in output headers.
pub const RNG_ALGORITHM: &str = "chacha8";

/// A deterministic random stream identified by `(seed, label)`.
///
/// Identical `(seed, label)` pairs yield identical draw sequences within one
/// build; cross-implementation bitwise equality is not promised.
pub struct RngStream {
    seed: u64,
    label: String,
    rng: ChaCha8Rng,
}

/// FNV-1a over the label bytes, used to spread the label into the key.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut state = fnv1a(label.as_bytes());
        for chunk in key[8..].chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
        }
        RngStream {
            seed,
            label: label.to_string(),
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// One draw from N(0, std^2), generated at f64 and narrowed to `T`.
    pub fn normal<T: Scalar>(&mut self, std: f64) -> T {
        let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
        T::from_f64(dist.sample(&mut self.rng))
    }

    /// Fills `out` with N(0, std^2) draws in index order.
    pub fn fill_normal<T: Scalar>(&mut self, out: &mut [T], std: f64) {
        let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
        for v in out.iter_mut() {
            *v = T::from_f64(dist.sample(&mut self.rng));
        }
    }

    /// Uniform draw from `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        slice.shuffle(&mut self.rng);
    }
}
