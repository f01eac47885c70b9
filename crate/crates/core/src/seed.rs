//! Seed derivation.
//!
//! Every stochastic stage draws from its own generator whose seed is
//! `derive_seed(master, stage, index)`. The stage name is hashed with 64-bit
//! FNV-1a and folded together with the master seed and index through the
//! SplitMix64 finalizer. The function is fixed forever: adding a new stage
//! never perturbs the seeds of existing stages.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 output finalizer.
pub const fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Seed for trajectory/stage `index` of `stage` under `master`.
pub fn derive_seed(master: u64, stage: &str, index: u64) -> u64 {
    let mut h = mix64(master.wrapping_add(0x9e37_79b9_7f4a_7c15));
    h = mix64(h ^ fnv1a(stage.as_bytes()));
    mix64(h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stage_rng(master: u64, stage: &str, index: u64) -> ChaCha8Rng {
    rng_from_seed(derive_seed(master, stage, index))
}
