//! Image quality metrics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Peak-to-peak range of images in `[-1, 1]`.
pub const IMAGE_PEAK: f64 = 2.0;
pub const PSNR_CAP: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_dims(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("metric inputs {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `10·log10(peak²/MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(reference: &Tensor, test: &Tensor, peak: f64) -> Result<f64> {
    same_dims(reference, test)?;
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

fn window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|v| v / s).collect()
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, range: f64) -> f64 {
    let g = window();
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for i in 0..oh {
        for j in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (u, gu) in g.iter().enumerate() {
                for (v, gv) in g.iter().enumerate() {
                    let wt = gu * gv;
                    let k = (i + u) * w + j + v;
                    let (x, y) = (a[k], b[k]);
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    total / (oh * ow) as f64
}

/// Mean SSIM over all windows that fit inside the image (11×11 Gaussian,
/// σ = 1.5); leading axes are treated as separate channels and averaged.
pub fn ssim_with_range(reference: &Tensor, test: &Tensor, range: f64) -> Result<f64> {
    same_dims(reference, test)?;
    let dims = reference.dims();
    if dims.len() < 2 {
        return Err(Error::shape(format!("SSIM needs an image, got {dims:?}")));
    }
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(format!("image {h}x{w} smaller than the SSIM window")));
    }
    let plane = h * w;
    let planes = reference.len() / plane;
    let s: f64 = (0..planes)
        .map(|p| {
            let r = p * plane..(p + 1) * plane;
            ssim_plane(&reference.data()[r.clone()], &test.data()[r], h, w, range)
        })
        .sum();
    Ok(s / planes as f64)
}

pub fn ssim(reference: &Tensor, test: &Tensor) -> Result<f64> {
    ssim_with_range(reference, test, IMAGE_PEAK)
}
