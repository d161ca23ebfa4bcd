//! Deterministic RNG stream derivation.
//!
//! Every random decision in the crate draws from a ChaCha8 stream keyed by a
//! base seed plus a short tag path (purpose, epoch, iteration, ...). Streams
//! are independent of each other, so adding draws to one never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stream purpose tags.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const INIT_LORA: u64 = 2;
    pub const LABELED_ORDER: u64 = 3;
    pub const UNLABELED_ORDER: u64 = 4;
    pub const MIX: u64 = 5;
    pub const PAIRING: u64 = 6;
    pub const STUDENT_DROPOUT: u64 = 7;
    pub const TEACHER_MC: u64 = 8;
    pub const INPUT_NOISE: u64 = 9;
    pub const PHANTOM: u64 = 10;
}
