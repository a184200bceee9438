//! Shared input generators for the benchmarks.

use glnet_core::metrics::MapPair;
use glnet_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tensor with entries drawn from `U(-1, 1)`.
pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Tensor::new(data, shape).expect("shape matches buffer")
}

/// `count` images of `side x side` RGB in `[0, 1]`.
pub fn images(rng: &mut ChaCha8Rng, count: usize, side: usize) -> Vec<Tensor<f32>> {
    (0..count)
        .map(|_| {
            let data = (0..3 * side * side).map(|_| rng.gen_range(0.0f32..1.0)).collect();
            Tensor::new(data, &[3, side, side]).expect("shape matches buffer")
        })
        .collect()
}

/// Prediction/mask pairs with a square object and a noisy prediction around it.
pub fn map_pairs(rng: &mut ChaCha8Rng, count: usize, side: usize) -> Vec<MapPair> {
    (0..count)
        .map(|_| {
            let lo = rng.gen_range(0..side / 2);
            let hi = lo + side / 3;
            let gt: Vec<bool> = (0..side * side)
                .map(|i| (lo..hi).contains(&(i % side)) && (lo..hi).contains(&(i / side)))
                .collect();
            let pred = gt
                .iter()
                .map(|&g| (if g { 0.7 } else { 0.2 } + rng.gen_range(-0.2..0.2f64)).clamp(0.0, 1.0))
                .collect();
            MapPair::new(side, side, pred, gt).expect("consistent pair")
        })
        .collect()
}
