//! Deterministic, splittable seeding.
//!
//! Every stochastic object is keyed by `(seed, stream)` so results never depend on
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for replica `index` of a family identified by `(seed, tag)`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ mix64(tag)) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// ChaCha8 generator positioned on an independent stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream tags used across modules, kept distinct so families never collide.
pub mod tags {
    pub const FIELD: u64 = 1;
    pub const PATHS: u64 = 2;
    pub const REPLICA: u64 = 3;
    pub const ETA: u64 = 4;
    pub const CONDITIONED: u64 = 5;
    pub const POOL_A: u64 = 6;
    pub const POOL_B: u64 = 7;
    pub const EXPERIMENT: u64 = 8;
}
