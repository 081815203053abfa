//! Deterministic seed derivation.
//!
//! Every random stream in an experiment (initialization, data generation,
//! masking, shuffling, Brownian paths) is keyed by `(master, stream, index)`
//! and mixed with SplitMix64, so adding a new stream or index never shifts the
//! values drawn by an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 increment (the 64-bit golden ratio).
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
/// Odd multiplier separating stream tags from indices.
const STREAM_MULT: u64 = 0xD1B5_4A32_D192_ED03;

/// Named random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Data = 2,
    Brownian = 3,
    Shuffle = 4,
    Mask = 5,
    Holdout = 6,
    Split = 7,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    let key = (stream as u64).wrapping_mul(STREAM_MULT) ^ splitmix64(index);
    splitmix64(splitmix64(master) ^ key)
}

/// FNV-1a hash used to key per-layer streams by parameter name.
pub fn name_index(name: &str) -> u64 {
    name.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    rng_from(derive_seed(master, stream, index))
}
