//! Seeded random streams. Every stochastic component draws from a
//! `ChaCha8Rng` whose seed is derived from the run seed, so the order of
//! draws is part of each component's reproducibility contract.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream tag and an index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fisher–Yates shuffle, walking from the last position down.
pub fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Draws `count` items from `pool`: without replacement when the pool is
/// large enough, otherwise uniformly with replacement.
pub fn sample_items<T: Copy, R: Rng + ?Sized>(pool: &[T], count: usize, rng: &mut R) -> Vec<T> {
    assert!(!pool.is_empty(), "cannot sample from an empty pool");
    if pool.len() >= count {
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        // partial Fisher–Yates from the front
        for i in 0..count {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        idx[..count].iter().map(|&i| pool[i]).collect()
    } else {
        (0..count)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect()
    }
}
