//! Seeded randomness helpers. Everything downstream takes an explicit RNG
//! so that runs are reproducible bit-for-bit from a seed.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

/// The RNG used throughout the crate.
pub type SeedRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeedRng {
    SeedRng::seed_from_u64(seed)
}

pub fn normal<F: Scalar, R: Rng>(rng: &mut R) -> F {
    F::of_f64(rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vec<F: Scalar, R: Rng>(rng: &mut R, n: usize) -> Vec<F> {
    (0..n).map(|_| normal(rng)).collect()
}

pub fn uniform<F: Scalar, R: Rng>(rng: &mut R, lo: f64, hi: f64) -> F {
    F::of_f64(rng.random_range(lo..hi))
}
