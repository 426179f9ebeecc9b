//! Shared fixtures for the criterion benches.

use genmix_core::models::{build_initialized, NetworkModel, Role};
use genmix_core::nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `b` MNIST-shaped images with a bright bar on a noisy background.
pub fn images(b: usize, seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(b * 784);
    for i in 0..b {
        let col = 4 + 2 * (i % 10);
        for p in 0..784 {
            let bar = p % 28 == col && (4..24).contains(&(p / 28));
            data.push(if bar { 0.9 } else { r.gen_range(0.0f32..0.1) });
        }
    }
    Tensor::new(vec![b, 1, 28, 28], data).expect("shape matches data")
}

pub fn labels(b: usize) -> Vec<u8> {
    (0..b).map(|i| (i % 10) as u8).collect()
}

pub fn model(role: Role, seed: u64) -> NetworkModel {
    build_initialized(role, &mut ChaCha8Rng::seed_from_u64(seed))
}
