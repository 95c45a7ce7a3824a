//! Periodic Gaussian blur over the last two axes.

use crate::error::{Error, Result};
use crate::stage::{check_cotangent, Pullback, Stage};
use crate::tensor::Tensor;

/// Normalized 1D Gaussian taps on `[-R, R]`, `R = ⌈4σ⌉`.
pub fn gaussian_taps(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("blur width must be positive, got {sigma}")));
    }
    let r = (4.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

/// Periodic 1D pass of `taps` along one axis of every `h × w` slice.
/// `flip` applies the correlation (adjoint) instead of the convolution.
fn pass(x: &Tensor, taps: &[f64], along_rows: bool, flip: bool) -> Result<Tensor> {
    let dims = x.dims();
    if dims.len() < 2 {
        return Err(Error::shape(format!("image expected, got {dims:?}")));
    }
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    let r = (taps.len() / 2) as i64;
    let mut out = vec![0.0; x.len()];
    let src = x.data();
    for (slice, dst) in src.chunks(h * w).zip(out.chunks_mut(h * w)) {
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for (t, &k) in taps.iter().enumerate() {
                    let off = t as i64 - r;
                    let off = if flip { off } else { -off };
                    let (ii, jj) = if along_rows {
                        ((i as i64 + off).rem_euclid(h as i64) as usize, j)
                    } else {
                        (i, (j as i64 + off).rem_euclid(w as i64) as usize)
                    };
                    acc += k * slice[ii * w + jj];
                }
                dst[i * w + j] = acc;
            }
        }
    }
    Tensor::new(dims.to_vec(), out)
}

pub fn blur(x: &Tensor, taps: &[f64]) -> Result<Tensor> {
    pass(&pass(x, taps, true, false)?, taps, false, false)
}

pub fn blur_adjoint(y: &Tensor, taps: &[f64]) -> Result<Tensor> {
    pass(&pass(y, taps, false, true)?, taps, true, true)
}

/// Blurring operator `H` as a stage.
pub struct BlurStage {
    taps: Vec<f64>,
    sigma: f64,
}

impl BlurStage {
    pub fn new(sigma: f64) -> Result<Self> {
        Ok(Self {
            taps: gaussian_taps(sigma)?,
            sigma,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl Stage for BlurStage {
    fn name(&self) -> &str {
        "blur"
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Pullback)> {
        let y = blur(x, &self.taps)?;
        let taps = self.taps.clone();
        let dims = y.dims().to_vec();
        Ok((
            y,
            Pullback::new(move |g| {
                check_cotangent(&dims, g)?;
                blur_adjoint(g, &taps)
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn delta_gives_centered_kernel() {
        let taps = gaussian_taps(1.5).unwrap();
        let mut x = Tensor::zeros(&[32, 32]);
        x.set2(16, 16, 1.0);
        let y = blur(&x, &taps).unwrap();
        let r = taps.len() / 2;
        for i in 0..32 {
            for j in 0..32 {
                let (di, dj) = (i as i64 - 16, j as i64 - 16);
                let expect = if di.unsigned_abs() as usize <= r && dj.unsigned_abs() as usize <= r {
                    taps[(di + r as i64) as usize] * taps[(dj + r as i64) as usize]
                } else {
                    0.0
                };
                assert!((y.get2(i, j) - expect).abs() < 1e-15);
            }
        }
        assert!((y.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_preserved() {
        let taps = gaussian_taps(3.0).unwrap();
        let y = blur(&Tensor::filled(&[16, 16], 0.37), &taps).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-14));
    }

    #[test]
    fn adjoint_dot_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let taps = gaussian_taps(2.3).unwrap();
        let m = Tensor::randn(&[2, 16, 24], &mut rng);
        let y = Tensor::randn(&[2, 16, 24], &mut rng);
        let lhs = blur(&m, &taps).unwrap().dot(&y);
        let rhs = m.dot(&blur_adjoint(&y, &taps).unwrap());
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(BlurStage::new(0.0).is_err());
    }
}
