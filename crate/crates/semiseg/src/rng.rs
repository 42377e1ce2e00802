//! Seed derivation for reproducible, independent random streams.
//!
//! Every source of randomness in a run is a ChaCha8 generator seeded from the
//! run seed plus a stream tag and optional indices (epoch, step, sample).
//! Parallel execution therefore cannot change results: each consumer owns a
//! generator derived from stable coordinates, never a shared one.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod stream {
    pub const INIT: u64 = 0x01;
    pub const SPLIT: u64 = 0x02;
    pub const WEAK: u64 = 0x03;
    pub const STRONG: u64 = 0x04;
    pub const SHUFFLE: u64 = 0x05;
    pub const SYNTH: u64 = 0x06;
    pub const VOLUME: u64 = 0x07;
    pub const SELF_ROT: u64 = 0x08;
    pub const VAL_AUG: u64 = 0x09;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with stream tags into a new 64-bit seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &t in tags {
        s = splitmix64(s ^ t);
    }
    s
}

/// Generator for the stream identified by `tags` under `base`.
pub fn rng_for(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}
