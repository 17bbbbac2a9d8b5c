//! Seed derivation for independent, order-free random streams.
//!
//! Every random draw in the generators comes from a ChaCha8 stream seeded
//! with `derive(master, stream, index)`, so a sample's content depends only
//! on its index and never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags.
pub const FLOORPLAN: u64 = 0x666c_6f6f_7270_6c6e;
pub const POWER: u64 = 0x706f_7765_7200_0000;
pub const SAMPLE: u64 = 0x7361_6d70_6c65_0000;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index)
}

/// Two-level index, e.g. `(floorplan, ordinal)`.
pub fn derive2(master: u64, stream: u64, major: u64, minor: u64) -> u64 {
    splitmix64(derive(master, stream, major) ^ splitmix64(minor))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
