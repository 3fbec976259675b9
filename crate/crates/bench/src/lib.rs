//! Shared inputs for the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform samples in `[0, 1]` from a fixed seed.
pub fn unipolar_samples(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect()
}

/// A sparse binary raster, `density` of the entries set to one.
pub fn spike_values(n: usize, density: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (rng.gen::<f64>() < density) as u8 as f64)
        .collect()
}
