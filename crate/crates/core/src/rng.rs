//! Seed handling. Every random stream in the crate is a SplitMix64 generator
//! seeded through [`mix_seed`], so runs are reproducible from a single `u64`.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output finalizer.
pub fn splitmix64_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for stream `stream` (e.g. a schedule node id)
/// from a base seed: `finalize(base + (stream + 1) * gamma)`.
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    splitmix64_finalize(base.wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Purpose tags keep the streams used for init, batching and data generation
/// apart even when they share a node seed.
pub mod purpose {
    pub const INIT: u64 = 0x1;
    pub const BATCHES: u64 = 0x2;
    pub const SYNTH_TRAIN: u64 = 0x10;
    pub const SYNTH_VAL: u64 = 0x11;
    pub const SYNTH_PROTOTYPES: u64 = 0x12;
}

pub fn stream(seed: u64, purpose: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(mix_seed(seed, purpose))
}
