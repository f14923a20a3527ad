//! Counter-based random streams.
//!
//! Every draw in the crate comes from a ChaCha8 stream keyed by
//! `(seed, domain, a, b)`; e.g. `(seed, NOISE, sample, step)` for forward noise.
//! The same tuple always yields the same stream and distinct tuples yield
//! independent ones, so generation order and thread count never matter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Keeping them disjoint prevents accidental stream reuse.
pub mod domain {
    pub const MARGINAL_NOISE: u64 = 1;
    pub const DDPM_NOISE: u64 = 2;
    pub const SYNTH_SAMPLE: u64 = 3;
    pub const SYNTH_ROTATION: u64 = 4;
    pub const PROJECTION: u64 = 5;
    pub const CF_FREQUENCY: u64 = 6;
    pub const PROBE_SPLIT: u64 = 7;
}

pub fn stream(seed: u64, domain: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
