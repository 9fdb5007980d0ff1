//! Deterministic stream derivation: every consumer of randomness gets its
//! own ChaCha stream keyed by (seed, stream id), so work can be reordered
//! or parallelized without changing any draw.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step, used to decorrelate stream keys.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix an arbitrary chain of stream identifiers into one key.
pub fn mix_stream(seed: u64, ids: &[u64]) -> u64 {
    let mut key = splitmix64(seed);
    for &id in ids {
        key = splitmix64(key ^ id.wrapping_mul(0x2545_f491_4f6c_dd1d));
    }
    key
}

/// Derive an independent rng for the given stream of the given seed.
pub fn derive_rng(seed: u64, ids: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_stream(seed, ids))
}
