//! Noise models for synthetic observations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Data noise standard deviation of the deblurring experiments on the
/// 8-bit intensity scale.
pub const DEBLUR_NOISE_8BIT: f64 = 50.0;
/// Half-range of 8-bit intensities around the model-space origin.
pub const EIGHT_BIT_HALF_RANGE: f64 = 127.5;
pub const TRAVELTIME_NOISE_STD: f64 = 0.001;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Per-component noise std for a target SNR over the entries in `support`.
pub fn snr_noise_std(d: &Tensor, support: &[bool], snr_db: f64) -> f64 {
    let count = support.iter().filter(|&&s| s).count().max(1);
    let energy: f64 = d.data().iter().zip(support).filter(|(_, &s)| s).map(|(v, _)| v * v).sum();
    (energy / count as f64).sqrt() * 10f64.powf(-snr_db / 20.0)
}

/// Adds i.i.d. Gaussian noise at `snr_db` to the components flagged in
/// `support` (all components when `None`). Infinite SNR leaves `d` unchanged.
pub fn add_noise_snr(d: &Tensor, snr_db: f64, seed: u64, support: Option<&[bool]>) -> Result<Tensor> {
    if snr_db.is_nan() {
        return Err(Error::Config("SNR must be a number".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(d.clone());
    }
    let all = vec![true; d.len()];
    let support = support.unwrap_or(&all);
    if support.len() != d.len() {
        return Err(Error::shape("noise support does not match data"));
    }
    let std = snr_noise_std(d, support, snr_db);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = d.clone();
    for (v, &s) in out.data_mut().iter_mut().zip(support) {
        let e = gauss(&mut rng);
        if s {
            *v += std * e;
        }
    }
    Ok(out)
}

/// Additive Gaussian noise given on the 8-bit scale, applied in model units.
pub fn add_noise_8bit(d: &Tensor, std_8bit: f64, seed: u64) -> Result<Tensor> {
    if !(std_8bit >= 0.0) {
        return Err(Error::Config(format!("noise level must be >= 0, got {std_8bit}")));
    }
    let std = std_8bit / EIGHT_BIT_HALF_RANGE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = d.clone();
    for v in out.data_mut() {
        *v += std * gauss(&mut rng);
    }
    Ok(out)
}

/// Multiplicative traveltime noise `T·(1 + ε)`, `ε ~ N(0, std²)`.
pub fn traveltime_noise(t: &Tensor, std: f64, seed: u64) -> Result<Tensor> {
    if !(std >= 0.0) {
        return Err(Error::Config(format!("noise level must be >= 0, got {std}")));
    }
    if std == 0.0 {
        return Ok(t.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = t.clone();
    for v in out.data_mut() {
        *v *= 1.0 + std * gauss(&mut rng);
    }
    Ok(out)
}

/// Empirical SNR in dB of `noisy` against `clean` over `support`.
pub fn empirical_snr_db(clean: &Tensor, noisy: &Tensor, support: Option<&[bool]>) -> f64 {
    let all = vec![true; clean.len()];
    let support = support.unwrap_or(&all);
    let (mut s, mut n) = (0.0, 0.0);
    for ((a, b), &k) in clean.data().iter().zip(noisy.data()).zip(support) {
        if k {
            s += a * a;
            n += (b - a) * (b - a);
        }
    }
    10.0 * (s / n).log10()
}
