//! Counter-based random streams.
//!
//! A stream is addressed by a tuple of integers (run seed, entity, purpose,
//! tick, ...) rather than drawn from shared generator state, so the order in
//! which vehicles are processed cannot change any draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Stable 64-bit FNV-1a hash for string identifiers.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn mix_key(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6a09_e667_f3bc_c908, |h, p| splitmix64(h ^ splitmix64(*p)))
}

/// Generator for one stream address.
pub fn keyed_rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_key(parts))
}

/// Stream purposes, kept distinct so independent draws never share an address.
pub mod purpose {
    pub const SENSOR: u64 = 1;
    pub const ACOUSTIC_LOSS: u64 = 2;
    pub const EPISODE_INIT: u64 = 3;
}
