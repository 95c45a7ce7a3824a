#![allow(dead_code)]

use glayers_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(dims: &[usize], seed: u64) -> Tensor {
    Tensor::randn(dims, &mut rng(seed))
}

/// Standardized log of Gamma(1, 1) draws: left-skewed.
pub fn log_gamma(dims: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let g: Gamma<f64> = Gamma::new(1.0, 1.0).unwrap();
    let n: usize = dims.iter().product();
    let x: Vec<f64> = (0..n).map(|_| g.sample(&mut r).ln()).collect();
    let m = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    Tensor::new(dims.to_vec(), x.iter().map(|v| (v - m) / sd).collect()).unwrap()
}

/// `x·exp(δx²/2)` of standard normal draws.
pub fn heavy_tailed(dims: &[usize], delta: f64, seed: u64) -> Tensor {
    gaussian(dims, seed).map(|x| x * (0.5 * delta * x * x).exp())
}

/// Standard normal plus `0.5·sin(2πx/64)·cos(2πy/64)` on the last two axes.
pub fn planar_pattern(dims: &[usize], seed: u64) -> Tensor {
    let mut t = gaussian(dims, seed);
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    let tau = 2.0 * std::f64::consts::PI;
    for (k, v) in t.data_mut().iter_mut().enumerate() {
        let x = (k / w) % h;
        let y = k % w;
        *v += 0.5 * (tau * x as f64 / 64.0).sin() * (tau * y as f64 / 64.0).cos();
    }
    t
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}
