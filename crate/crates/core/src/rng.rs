//! Seeded random streams.
//!
//! Every stochastic operation takes a 64-bit seed and builds its own
//! ChaCha8 stream from it, so results are reproducible across platforms.
//! Parallel work derives independent substreams with [`substream`].

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Builds the deterministic generator for `seed`.
pub fn from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of substream `index` under a `label` namespace.
///
/// Different labels keep e.g. the jitter stream and the dark-count stream of
/// the same run uncorrelated even when they share a parent seed.
pub fn substream(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = mix64(seed);
    for b in label.bytes() {
        h = mix64(h ^ u64::from(b));
    }
    mix64(h ^ mix64(index))
}

/// A fresh seed from operating-system entropy, for live runs.
pub fn entropy_seed() -> u64 {
    rand::rng().next_u64()
}
