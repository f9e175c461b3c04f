//! Seed derivation for replayable experiments.
//!
//! Every random decision in the engine draws from a ChaCha8 stream seeded by
//! mixing the experiment seed with the context that owns the decision (round,
//! client, scene, ...). Derived streams are independent of execution order and
//! of how many threads run the clients, which is what makes reruns bit-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; full-avalanche mixing of one word into the state.
fn mix64(mut state: u64) -> u64 {
    state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a context path.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut acc = mix64(base);
    for &part in path {
        acc = mix64(acc ^ part);
    }
    acc
}

/// Deterministic RNG for a derived seed.
pub fn seeded_rng(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

/// Stream labels so unrelated decisions never share a derived seed.
pub mod stream {
    pub const REGION_MAPS: u64 = 1;
    pub const SCENE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const PARTITION: u64 = 5;
    pub const ACTIVATION: u64 = 6;
    pub const CLIENT_TRAIN: u64 = 7;
    pub const EPOCH_SHUFFLE: u64 = 8;
}
