//! Seeded randomness. Every stochastic choice in the crate goes through a
//! ChaCha8 stream so that runs are reproducible across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::NdTensor;

pub type StdRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> StdRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from a base seed and a list of labels.
pub fn derived(seed: u64, labels: &[u64]) -> StdRng {
    // splitmix64 finalizer over the label sequence
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &l in labels {
        h = h.wrapping_add(l).wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    ChaCha8Rng::seed_from_u64(h)
}

pub fn uniform_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> NdTensor {
    let mut rng = seeded(seed);
    NdTensor::from_fn(shape, |_| rng.random_range(lo..hi))
}
