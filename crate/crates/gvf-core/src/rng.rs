//! Seed derivation for reproducible experiments.
//!
//! Every random stream in the crate is a [`ChaCha8Rng`] seeded through
//! [`derive_seed`], so a single experiment seed expands into independent,
//! platform-stable streams (environment resets, policy draws, parameter
//! initialization, ...).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-stream tags. Keeping them in one place avoids accidental reuse.
pub mod stream {
    pub const ENV: u64 = 1;
    pub const POLICY: u64 = 2;
    pub const INIT_REPR: u64 = 3;
    pub const INIT_RL_HEAD: u64 = 4;
    pub const INIT_ANSWER_HEAD: u64 = 5;
    pub const FEATURES: u64 = 6;
    pub const QNET: u64 = 7;
}

/// splitmix64 finalizer; decorrelates nearby (base, tag) pairs.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for the sub-stream `tag` of `base`.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    splitmix64(base ^ splitmix64(tag))
}

/// The crate-wide deterministic generator.
pub fn chacha(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
