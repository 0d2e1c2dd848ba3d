//! Deterministic seed derivation for replicated experiments.
//!
//! Every replicate, restart or Monte Carlo stream draws from its own
//! `ChaCha8Rng` whose seed is a pure function of a base seed and a path of
//! indices. Runs are therefore reproducible regardless of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `base` and a path of stream indices.
pub fn child_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(base), |acc, &k| {
        splitmix64(acc ^ splitmix64(k.wrapping_add(0xA5A5_A5A5)))
    })
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for the stream identified by `path` under `base`.
pub fn child_rng(base: u64, path: &[u64]) -> SimRng {
    rng_from_seed(child_seed(base, path))
}
