//! Counter-based seeding.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose seed is a
//! SplitMix64 mix of a user seed and a few integer or string keys. A stream
//! therefore depends only on what it is keyed by, never on how many draws
//! happened before it or on which thread asked.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a, stable across platforms and releases.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Folds `keys` into `seed` one at a time.
pub fn derive(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(seed), |acc, &k| mix64(acc ^ mix64(k)))
}

pub fn rng_for(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, keys))
}

/// Domain tags so that streams keyed by the same numbers for different
/// purposes never coincide.
pub(crate) mod tag {
    pub const EPISODE: u64 = 0x4550_4953;
    pub const NEGATIVE: u64 = 0x4e45_4741;
    pub const SYNTH: u64 = 0x5359_4e54;
}
