//! Deterministic seed splitting.
//!
//! A child stream is identified by `(master, index)` and seeded with
//! `splitmix64(master ^ splitmix64(index))`, so streams never depend on
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// One round of the SplitMix64 finaliser.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of child stream `index` under `master`.
#[inline]
pub fn child_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Generator for child stream `index` under `master`.
pub fn child_rng(master: u64, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(child_seed(master, index))
}
