//! Seed streams.
//!
//! Every stochastic component takes an explicit `u64` seed. Child seeds are
//! derived by mixing the parent with a tag path through SplitMix64, so
//! independent streams (per window, per client, per epoch) never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `parent` and a path of tags.
pub fn derive(parent: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(parent), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags, kept distinct so unrelated consumers of one master seed
/// never collide.
pub mod tag {
    pub const DATA: u64 = 0x01;
    pub const MODEL_INIT: u64 = 0x02;
    pub const CLIENT: u64 = 0x03;
    pub const SELECT: u64 = 0x04;
    pub const EPOCH: u64 = 0x05;
    pub const KEYS: u64 = 0x06;
    pub const PARTITION: u64 = 0x07;
    pub const SPLIT: u64 = 0x08;
    pub const WINDOW: u64 = 0x09;
    pub const TRAIN: u64 = 0x0A;
}
