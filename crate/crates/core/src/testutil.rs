//! Seeded random tensors for tests, benches and examples.

pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Precision, Tensor};

/// Tensor with elements drawn from U(lo, hi).
pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64, precision: Precision) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_f64(shape, &v, precision).expect("shape matches element count")
}

/// Tensor with standard normal elements.
pub fn gaussian(shape: &[usize], seed: u64, precision: Precision) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_f64(shape, &v, precision).expect("shape matches element count")
}
