//! Seed plumbing. All randomness in the crate flows from a single `u64` seed
//! through [`derive_seed`], so any sub-task (a permutation, a replicate, a
//! sweep cell) owns an independent stream that does not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream label.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix(mix(seed) ^ mix(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Child generator for `(seed, stream)`.
pub fn child_rng(seed: u64, stream: u64) -> Rng {
    rng_from(derive_seed(seed, stream))
}

/// Named stream labels, so the harness never reuses a stream by accident.
pub mod streams {
    pub const Q_SAMPLE_TRAIN: u64 = 1;
    pub const Q_SAMPLE_TEST: u64 = 2;
    pub const ESTIMATOR: u64 = 3;
    pub const PERMUTATION: u64 = 4;
    pub const UNIFORM_WEIGHTS: u64 = 5;
    pub const GENERATOR: u64 = 6;
    pub const BANDWIDTH: u64 = 7;
    pub const REPLICATE: u64 = 8;
    pub const CELL: u64 = 9;
}
