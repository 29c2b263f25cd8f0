//! Seed fan-out and the crate-wide RNG choice.
//!
//! One global seed is split into named sub-seeds so that each component
//! (data generation, weight init, dropout, search) can be reproduced in
//! isolation: `subseed(seed, "init")` is stable across runs and platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG used everywhere in the crate.
pub type Rng = ChaCha8Rng;

/// Derive a named sub-seed from a global seed (FNV-1a over the name,
/// mixed with the seed by a splitmix64 finalizer).
pub fn subseed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    mix(seed.wrapping_add(h))
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
