//! Single-coil compressive-sensing MRI: row-masked unitary 2D FFT.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::stage::{check_cotangent, Pullback, Stage};
use crate::tensor::Tensor;

fn fft2(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (fr, fc) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for row in data.chunks_mut(w) {
        fr.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = data[i * w + j];
        }
        fc.process(&mut col);
        for i in 0..h {
            data[i * w + j] = col[i];
        }
    }
    let s = 1.0 / ((h * w) as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= s);
}

fn check_pow2(h: usize, w: usize) -> Result<()> {
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::Dimension(format!("{h}x{w} is not a power-of-two grid")));
    }
    Ok(())
}

/// Binary row mask in native FFT layout: `center_lines` lowest-frequency rows
/// (indices near 0 and near `rows`) plus seeded random rows, `round(rows/accl)`
/// in total.
pub fn make_mask(dims: &[usize], accl: f64, center_lines: usize, seed: u64) -> Result<Tensor> {
    if dims.len() != 2 {
        return Err(Error::shape(format!("mask dims must be 2D, got {dims:?}")));
    }
    if !(accl >= 1.0 && accl.is_finite()) {
        return Err(Error::Config(format!("acceleration must be >= 1, got {accl}")));
    }
    let (h, w) = (dims[0], dims[1]);
    let kept = ((h as f64 / accl).round() as usize).max(1);
    if center_lines > kept || center_lines > h {
        return Err(Error::Config(format!(
            "{center_lines} center lines exceed the {kept} rows kept at acceleration {accl}"
        )));
    }
    let mut keep = vec![false; h];
    let lo = center_lines.div_ceil(2);
    for k in 0..lo {
        keep[k] = true;
    }
    for k in 0..center_lines - lo {
        keep[h - 1 - k] = true;
    }
    let mut rest: Vec<usize> = (0..h).filter(|&i| !keep[i]).collect();
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for &i in rest.iter().take(kept - center_lines) {
        keep[i] = true;
    }
    let mut m = Tensor::zeros(&[h, w]);
    for (i, &k) in keep.iter().enumerate() {
        if k {
            m.data_mut()[i * w..(i + 1) * w].iter_mut().for_each(|v| *v = 1.0);
        }
    }
    Ok(m)
}

/// `m ↦ mask ∘ F m` with the unitary 2D FFT; output `[h, w, 2]` holds `(re, im)`.
pub struct CsMriStage {
    mask: Tensor,
}

impl CsMriStage {
    pub fn new(mask: Tensor) -> Result<Self> {
        if mask.dims().len() != 2 {
            return Err(Error::shape(format!("mask must be 2D, got {:?}", mask.dims())));
        }
        check_pow2(mask.rows(), mask.cols())?;
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Config("mask must be binary".into()));
        }
        Ok(Self { mask })
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn forward_op(&self, m: &Tensor) -> Result<Tensor> {
        if m.dims() != self.mask.dims() {
            return Err(Error::shape(format!("model {:?} vs mask {:?}", m.dims(), self.mask.dims())));
        }
        let (h, w) = (m.rows(), m.cols());
        let mut buf: Vec<Complex64> = m.data().iter().map(|&x| Complex64::new(x, 0.0)).collect();
        fft2(&mut buf, h, w, false);
        let mut out = Vec::with_capacity(2 * h * w);
        for (v, &k) in buf.iter().zip(self.mask.data()) {
            out.push(k * v.re);
            out.push(k * v.im);
        }
        Tensor::new_complex(vec![h, w, 2], out)
    }

    /// `Re(F⁻¹(mask ∘ r))`.
    pub fn adjoint_op(&self, r: &Tensor) -> Result<Tensor> {
        let (h, w) = (self.mask.rows(), self.mask.cols());
        if r.dims() != [h, w, 2] {
            return Err(Error::shape(format!("residual {:?} vs grid {h}x{w}", r.dims())));
        }
        let mut buf: Vec<Complex64> = r
            .data()
            .chunks(2)
            .zip(self.mask.data())
            .map(|(c, &k)| Complex64::new(k * c[0], k * c[1]))
            .collect();
        fft2(&mut buf, h, w, true);
        Tensor::new(vec![h, w], buf.iter().map(|c| c.re).collect())
    }

    /// Complex inverse `F⁻¹(mask ∘ r)` as `[h, w, 2]`.
    pub fn adjoint_complex(&self, r: &Tensor) -> Result<Tensor> {
        let (h, w) = (self.mask.rows(), self.mask.cols());
        let mut buf: Vec<Complex64> = r
            .data()
            .chunks(2)
            .zip(self.mask.data())
            .map(|(c, &k)| Complex64::new(k * c[0], k * c[1]))
            .collect();
        fft2(&mut buf, h, w, true);
        Tensor::new_complex(vec![h, w, 2], buf.iter().flat_map(|c| [c.re, c.im]).collect())
    }
}

impl Stage for CsMriStage {
    fn name(&self) -> &str {
        "csmri"
    }

    fn forward(&self, m: &Tensor) -> Result<(Tensor, Pullback)> {
        let d = self.forward_op(m)?;
        let me = CsMriStage {
            mask: self.mask.clone(),
        };
        let dims = d.dims().to_vec();
        Ok((
            d,
            Pullback::new(move |g| {
                check_cotangent(&dims, g)?;
                me.adjoint_op(g)
            }),
        ))
    }
}
