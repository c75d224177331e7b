//! Seed derivation. Every random draw in the crate comes from a ChaCha8 stream whose seed
//! is derived from a master seed plus a path of integer tags, so results do not depend on
//! evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Tags separating independent uses of one master seed.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const PATH: u64 = 4;
    pub const GROUP: u64 = 5;
    pub const SUBSET: u64 = 6;
    pub const BATCH: u64 = 7;
    pub const AUGMENT: u64 = 8;
    pub const HESSIAN: u64 = 9;
    pub const PROBE: u64 = 10;
    pub const FRONTIER: u64 = 11;
    pub const SPLIT: u64 = 12;
    pub const GRADIENT: u64 = 13;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |h, &t| splitmix64(h ^ splitmix64(t.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
