use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hash::splitmix64;

/// Deterministic generator for `(seed, stream)`; independent streams let
/// each component draw without perturbing the others.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut s = seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    ChaCha8Rng::seed_from_u64(splitmix64(&mut s))
}

/// Stream identifiers used across the crate.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const HASH: u64 = 2;
    pub const ROUNDING: u64 = 3;
    pub const DATA: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const MODEL: u64 = 7;
    pub const KMEANS: u64 = 8;
    pub const LSH: u64 = 9;
    pub const QUERIES: u64 = 10;
}
