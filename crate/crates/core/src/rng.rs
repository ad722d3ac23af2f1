//! Seeding policy.
//!
//! Path `i` of an ensemble with base seed `s` owns the generator
//! `ChaCha8Rng::seed_from_u64(s + i)` (wrapping). Each path draws its
//! increments step by step, modes in index order, so adding paths never
//! perturbs the streams of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PathRng = ChaCha8Rng;

pub fn path_seed(base_seed: u64, index: u64) -> u64 {
    base_seed.wrapping_add(index)
}

pub fn path_rng(base_seed: u64, index: u64) -> PathRng {
    PathRng::seed_from_u64(path_seed(base_seed, index))
}
