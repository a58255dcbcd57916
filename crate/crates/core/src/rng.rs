//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a master
//! seed and a path of stream indices, e.g. `(seed, [TREE, tree_index])`.
//! Streams never share state, so work can be split across threads in any
//! order without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags used by the crate. Callers may use any other values.
pub mod tag {
    pub const TREE: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const FOLDS: u64 = 3;
    pub const CV_FIT: u64 = 4;
    pub const BASELINE: u64 = 5;
    pub const PERMUTE: u64 = 6;
    pub const SYNTH: u64 = 7;
    pub const FIT: u64 = 8;
    pub const SEGMENT: u64 = 9;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `path` into `master`; distinct paths give unrelated seeds.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p.wrapping_mul(GOLDEN) ^ 0xA5A5_A5A5))
    })
}

pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}
