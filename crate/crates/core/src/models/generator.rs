//! A fixed, parameter-free stand-in generator: bilinear 4× upsampling,
//! periodic Gaussian smoothing, gain and `tanh`.

use crate::error::{Error, Result};
use crate::stage::{check_cotangent, Pullback, Stage};
use crate::tensor::Tensor;

use super::blur::{blur, blur_adjoint, gaussian_taps};

pub const UPSAMPLE: usize = 4;
pub const SMOOTH_SIGMA: f64 = 1.5;
pub const GAIN: f64 = 1.2;

/// Periodic linear interpolation weights: output `I` samples input
/// coordinate `(I + 0.5)/k − 0.5`.
fn taps_1d(n_in: usize, k: usize) -> Vec<(usize, usize, f64)> {
    (0..n_in * k)
        .map(|i| {
            let x = (i as f64 + 0.5) / k as f64 - 0.5;
            let i0 = x.floor();
            let w = x - i0;
            let a = (i0 as i64).rem_euclid(n_in as i64) as usize;
            let b = (a + 1) % n_in;
            (a, b, w)
        })
        .collect()
}

fn upsample(z: &Tensor, k: usize) -> Result<Tensor> {
    let (h, w) = (z.rows(), z.cols());
    let (ty, tx) = (taps_1d(h, k), taps_1d(w, k));
    let mut out = Tensor::zeros(&[h * k, w * k]);
    for (i, &(a, b, wy)) in ty.iter().enumerate() {
        for (j, &(c, d, wx)) in tx.iter().enumerate() {
            let v = (1.0 - wy) * ((1.0 - wx) * z.get2(a, c) + wx * z.get2(a, d))
                + wy * ((1.0 - wx) * z.get2(b, c) + wx * z.get2(b, d));
            out.set2(i, j, v);
        }
    }
    Ok(out)
}

fn upsample_adjoint(g: &Tensor, h: usize, w: usize, k: usize) -> Result<Tensor> {
    let (ty, tx) = (taps_1d(h, k), taps_1d(w, k));
    let mut out = Tensor::zeros(&[h, w]);
    for (i, &(a, b, wy)) in ty.iter().enumerate() {
        for (j, &(c, d, wx)) in tx.iter().enumerate() {
            let v = g.get2(i, j);
            let o = out.data_mut();
            o[a * w + c] += (1.0 - wy) * (1.0 - wx) * v;
            o[a * w + d] += (1.0 - wy) * wx * v;
            o[b * w + c] += wy * (1.0 - wx) * v;
            o[b * w + d] += wy * wx * v;
        }
    }
    Ok(out)
}

/// Latent `h × w` → image `4h × 4w` with values in `(−1, 1)`.
pub struct ToyGenerator {
    taps: Vec<f64>,
}

impl Default for ToyGenerator {
    fn default() -> Self {
        Self {
            taps: gaussian_taps(SMOOTH_SIGMA).expect("positive width"),
        }
    }
}

pub fn toy_generator(z: &Tensor) -> Result<Tensor> {
    ToyGenerator::default().apply(z)
}

impl Stage for ToyGenerator {
    fn name(&self) -> &str {
        "generator"
    }

    fn forward(&self, z: &Tensor) -> Result<(Tensor, Pullback)> {
        if z.dims().len() != 2 {
            return Err(Error::shape(format!("generator expects a 2D latent, got {:?}", z.dims())));
        }
        let (h, w) = (z.rows(), z.cols());
        let pre = blur(&upsample(z, UPSAMPLE)?, &self.taps)?.scale(GAIN);
        let m = pre.map(f64::tanh);
        let mc = m.clone();
        let taps = self.taps.clone();
        let pb = Pullback::new(move |g| {
            check_cotangent(mc.dims(), g)?;
            let gp = g.zip_map(&mc, |gi, mi| gi * GAIN * (1.0 - mi * mi))?;
            upsample_adjoint(&blur_adjoint(&gp, &taps)?, h, w, UPSAMPLE)
        });
        Ok((m, pb))
    }
}
