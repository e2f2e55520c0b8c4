//! Seeded universal hashing over the Mersenne prime 2^61 - 1.
//!
//! `h_i(x) = ((a_i * x + b_i) mod p) mod m` with `(a_i, b_i)` drawn from a
//! SplitMix64 stream started at the family seed. Everything is integer
//! arithmetic, so outputs are identical on every platform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MERSENNE_61: u64 = (1 << 61) - 1;

/// One step of the SplitMix64 generator.
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn mod_mersenne(x: u128) -> u64 {
    let p = MERSENNE_61 as u128;
    let mut r = (x & p) + (x >> 61);
    r = (r & p) + (r >> 61);
    if r >= p {
        r -= p;
    }
    r as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashFamily {
    seed: u64,
    constants: Vec<(u64, u64)>,
}

impl HashFamily {
    /// Builds `count` hash functions from `seed`.
    pub fn new(seed: u64, count: usize) -> Self {
        let mut state = seed;
        let constants = (0..count)
            .map(|_| {
                let mut a = splitmix64(&mut state) % MERSENNE_61;
                if a == 0 {
                    a = 1;
                }
                let b = splitmix64(&mut state) % MERSENNE_61;
                (a, b)
            })
            .collect();
        Self { seed, constants }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.constants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constants.is_empty()
    }

    pub fn constants(&self) -> &[(u64, u64)] {
        &self.constants
    }

    /// Bucket of `index` under hash `which`, in `[0, m)`.
    pub fn hash(&self, index: u64, which: usize, m: u64) -> Result<u64> {
        if m == 0 {
            return Err(Error::invalid("hash bucket count must be >= 1"));
        }
        let (a, b) = *self.constants.get(which).ok_or_else(|| {
            Error::invalid(format!(
                "hash id {which} out of range ({} functions)",
                self.constants.len()
            ))
        })?;
        Ok(Self::eval(a, b, index, m))
    }

    /// Unchecked variant for hot loops; `which` and `m` must be valid.
    #[inline]
    pub fn bucket(&self, index: u64, which: usize, m: u64) -> u64 {
        let (a, b) = self.constants[which];
        Self::eval(a, b, index, m)
    }

    #[inline]
    fn eval(a: u64, b: u64, index: u64, m: u64) -> u64 {
        let x = mod_mersenne(index as u128);
        let h = mod_mersenne(a as u128 * x as u128 + b as u128);
        h % m
    }
}
