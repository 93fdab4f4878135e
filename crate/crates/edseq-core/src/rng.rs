//! Seed plumbing. Every run has a single top-level seed; each randomized
//! stage (split, init, shuffle, teacher forcing, corpus generation) draws
//! from its own named substream so that changing one stage, or the order
//! stages run in, never perturbs the others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic substream seed for `(base_seed, label)`.
pub fn substream_seed(base_seed: u64, label: &str) -> u64 {
    splitmix64(base_seed ^ fnv1a(label))
}

/// RNG for the named substream of `base_seed`.
pub fn substream(base_seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(base_seed, label))
}
