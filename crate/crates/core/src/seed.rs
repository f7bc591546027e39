//! Deterministic seed derivation.
//!
//! Replication `r` of an experiment with master seed `m` draws from a generator
//! seeded with `split_seed(m, r)`: a SplitMix64 finalizer applied to
//! `m + (r + 1)·0x9E3779B97F4A7C15`. Seeds depend only on `(m, r)`, so adding
//! replications never changes earlier ones and no generator state is shared.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Golden-ratio increment of SplitMix64.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `index` derived from `master`.
#[inline]
pub fn split_seed(master: u64, index: u64) -> u64 {
    mix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn rng_for(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split_seed(master, index))
}
