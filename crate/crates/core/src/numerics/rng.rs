//! Seeded, splittable randomness.
//!
//! Every stochastic component (weight init, shuffling, sampling, dropout)
//! draws from a ChaCha8 stream derived from one root seed plus a string
//! label. ChaCha8 is counter-based, so identical seeds reproduce identical
//! sequences on every platform; the label keeps independent consumers from
//! sharing a stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Root seed for a run. All derived streams are pure functions of
/// `(seed, label)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Derive an independent ChaCha8 stream for the given label.
    pub fn stream(&self, label: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(label.as_bytes()));
        rng
    }
}

/// FNV-1a, used only to map stream labels to stream ids.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Fill a buffer with N(0, std^2) samples from the given stream.
pub fn fill_normal(rng: &mut ChaCha8Rng, std: f32, out: &mut [f32]) {
    for v in out.iter_mut() {
        let z: f32 = rng.sample(StandardNormal);
        *v = z * std;
    }
}
