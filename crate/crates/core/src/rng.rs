//! Counter-based random streams.
//!
//! Every random draw in the stack is keyed by `(seed, tags...)` rather than by
//! position in a shared generator. A slot's episode seeds, its action noise,
//! the minibatch shuffles and the level draws are therefore independent of how
//! many other slots exist or in which order they were stepped.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain-separation tags.
pub mod tag {
    pub const INIT: u64 = 0x1;
    pub const EPISODE: u64 = 0x2;
    pub const LEVEL: u64 = 0x3;
    pub const LEVEL_DRAW: u64 = 0x4;
    pub const POLICY: u64 = 0x5;
    pub const SHUFFLE: u64 = 0x6;
    pub const EVAL: u64 = 0x7;
    pub const SLIP: u64 = 0x8;
    pub const ROLLOUT: u64 = 0x9;
    pub const UPDATE: u64 = 0xa;
    pub const FILTER: u64 = 0xb;
    pub const CURRICULUM: u64 = 0xc;
    pub const QUAD: u64 = 0xd;
    pub const ENV: u64 = 0xe;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a seed and a tag path into a new 64-bit seed.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Uniform draw in [0, 1) that is a pure function of its key.
pub fn uniform(seed: u64, tags: &[u64]) -> f64 {
    (derive(seed, tags) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}
