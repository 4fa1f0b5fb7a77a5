//! Deterministic derivation of child seeds and random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keep derived seeds for different purposes apart.
pub mod stream {
    pub const TREE: u64 = 1;
    pub const PERMUTATION: u64 = 2;
    pub const REFIT: u64 = 3;
    pub const REPLICATE: u64 = 4;
    pub const VIMP: u64 = 5;
    pub const DATA: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th job of kind `tag` under `seed`.
pub fn derive(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(tag)).wrapping_add(index))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(seed: u64, tag: u64, index: u64) -> Rng {
    rng(derive(seed, tag, index))
}
