//! Deterministic RNG stream derivation.
//!
//! Every random draw in a run comes from a stream derived from the master
//! seed and a purpose tag, so adding or removing one consumer (e.g. an extra
//! parameter in a model variant) never shifts the draws seen by the others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Seed for the stream identified by `tag` under `master`.
pub fn subseed(master: u64, tag: &str) -> u64 {
    splitmix64(master ^ fnv1a(tag.as_bytes()))
}

/// Independent RNG stream for `tag` under `master`.
pub fn rng_for(master: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(master, tag))
}

/// Stream for per-epoch randomness (neighbor sampling, dropout masks).
pub fn epoch_rng(master: u64, epoch: usize) -> ChaCha8Rng {
    rng_for(master, &format!("epoch/{epoch}"))
}
