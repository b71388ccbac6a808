//! Deterministic random substreams.
//!
//! Every random draw in the simulator comes from a ChaCha8 generator whose key is
//! derived from one top-level seed and a path of tags (experiment, sweep point,
//! detector, repetition). Substreams are therefore independent of evaluation
//! order and thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tags that keep unrelated substreams apart.
pub mod tag {
    pub const SIGNAL: u64 = 0x5349_474e;
    pub const DARK: u64 = 0x4441_524b;
    pub const RETRIEVAL: u64 = 0x5245_5452;
    pub const HWP: u64 = 0x4857_5053;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a tag path into a child seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// A generator for the substream identified by `(seed, path)`.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let a = derive_seed(seed, path);
    let b = splitmix64(a ^ 0x6a09_e667_f3bc_c908);
    let c = splitmix64(b);
    let d = splitmix64(c);
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([a, b, c, d]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
