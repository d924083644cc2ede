//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream selected by `(seed, stream)`, so parallel work is reproducible
//! regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for `stream` under master `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a master seed with a path of indices (splitmix64 finalizer per step).
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    let mut h = seed;
    for &p in path {
        h = mix(h ^ mix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
