//! Deterministic random streams keyed by integer coordinates.
//!
//! Every random draw in the harness comes from a stream addressed by
//! `(seed, key...)`, e.g. `(seed, step, task, sample)`. Streams are
//! independent of evaluation order, so rollouts can run in any order or in
//! parallel and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed and a key path into one 64-bit value.
pub fn mix(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k.wrapping_add(0xA5A5))))
}

pub fn stream(seed: u64, keys: &[u64]) -> StreamRng {
    let mut bytes = [0u8; 32];
    let mut h = mix(seed, keys);
    for chunk in bytes.chunks_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Domain tags so unrelated consumers of the same seed never share a stream.
pub mod domain {
    pub const GENERATE: u64 = 1;
    pub const ROLLOUT: u64 = 2;
    pub const BATCH: u64 = 3;
    pub const REWARD: u64 = 4;
    pub const PROBE: u64 = 5;
    pub const HOLDOUT: u64 = 6;
    pub const INIT: u64 = 7;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = stream(7, &[1, 2]).random_iter().take(4).collect();
        let b: Vec<u64> = stream(7, &[1, 2]).random_iter().take(4).collect();
        let c: Vec<u64> = stream(7, &[2, 1]).random_iter().take(4).collect();
        let d: Vec<u64> = stream(8, &[1, 2]).random_iter().take(4).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
