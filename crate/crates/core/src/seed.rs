//! Deterministic seed derivation.
//!
//! All derived streams come from [`mix`], a SplitMix64 finalizer applied to
//! the parent seed combined with a stream index. Derivation never depends on
//! thread scheduling, so parallel and sequential runs draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a stream index.
///
/// `mix(s, i) = splitmix64(s ^ splitmix64(i))`.
pub fn mix(parent: u64, stream: u64) -> u64 {
    splitmix64(parent ^ splitmix64(stream))
}

/// Folds a path of stream indices into `parent`.
pub fn mix_all(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(parent, |acc, &s| mix(acc, s))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
