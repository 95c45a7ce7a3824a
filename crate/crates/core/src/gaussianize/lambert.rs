//! Lambert W × F_X tail correction with parameters estimated by the
//! iterative generalized method of moments (IGMM).
//!
//! A single heavy-tail parameter `δ` is shared by all entries. The executed
//! IGMM iterations are recorded on the tape; each inner `δ` fit enters the
//! tape as a custom op differentiated through the kurtosis condition.

use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::{brent_minimize, brent_root, w_delta_with_derivs, Bracket, DEFAULT_MAX_ITER};
use crate::stage::{taped_forward, Pullback, Stage};
use crate::tensor::Tensor;

pub const DELTA_MIN: f64 = 1e-6;
pub const DELTA_MAX: f64 = 5.0;
pub const MIN_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambertParams {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LambertParams {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 100,
        }
    }
}

/// Fitted parameters; `skipped` when the input was not heavy-tailed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambertFit {
    pub delta: f64,
    pub mu: f64,
    pub sigma: f64,
    pub iterations: usize,
    pub skipped: bool,
}

/// Central moments `(m2, m3, m4)` with population normalization.
fn moments(y: &[f64]) -> (f64, f64, f64, f64) {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in y {
        let c = v - m;
        let c2 = c * c;
        m2 += c2;
        m3 += c2 * c;
        m4 += c2 * c2;
    }
    (m, m2 / n, m3 / n, m4 / n)
}

/// Kurtosis `m4/m2²` (3 for a Gaussian).
pub fn kurtosis(y: &[f64]) -> f64 {
    let (_, m2, _, m4) = moments(y);
    m4 / (m2 * m2)
}

/// `∂Kurt/∂y_j` for every entry.
fn kurtosis_grad(y: &[f64]) -> Vec<f64> {
    let (m, m2, m3, m4) = moments(y);
    let n = y.len() as f64;
    y.iter()
        .map(|&v| {
            let c = v - m;
            4.0 / n * ((c * c * c - m3) / (m2 * m2) - m4 * c / (m2 * m2 * m2))
        })
        .collect()
}

fn transformed(u: &[f64], delta: f64) -> Result<Vec<(f64, f64, f64)>> {
    u.iter().map(|&x| w_delta_with_derivs(x, delta)).collect()
}

fn excess_after(u: &[f64], delta: f64) -> f64 {
    match transformed(u, delta) {
        Ok(v) => {
            let y: Vec<f64> = v.iter().map(|t| t.0).collect();
            kurtosis(&y) - 3.0
        }
        Err(_) => f64::NAN,
    }
}

/// `δ` minimizing `(Kurt(W_δ(u)) − 3)²` over `[DELTA_MIN, DELTA_MAX]`, searched
/// in `log δ`, with `∂δ/∂u` from the implicit function theorem when the
/// kurtosis condition holds exactly (zero otherwise: a bound is active).
pub fn fit_delta(u: &[f64]) -> Result<(f64, Vec<f64>)> {
    let b = Bracket::new(DELTA_MIN.ln(), DELTA_MAX.ln())?;
    let g = |t: f64| excess_after(u, t.exp());
    let tm = brent_minimize(|t| g(t).powi(2), b, 1e-10, DEFAULT_MAX_ITER)?;
    let mut root = None;
    if g(tm) == 0.0 {
        root = Some(tm);
    } else {
        let mut h = 1e-6;
        while h < 2.0 * b.width() {
            let lo = (tm - h).max(b.lo());
            let hi = (tm + h).min(b.hi());
            let (gl, gh) = (g(lo), g(hi));
            if gl.is_finite() && gh.is_finite() && gl.signum() != gh.signum() {
                root = Some(brent_root(g, Bracket::new(lo, hi)?, 0.0, DEFAULT_MAX_ITER)?);
                break;
            }
            if lo == b.lo() && hi == b.hi() {
                break;
            }
            h *= 4.0;
        }
    }
    let Some(t) = root else {
        log::debug!("heavy-tail parameter at a bound (log δ = {tm})");
        return Ok((tm.exp(), vec![0.0; u.len()]));
    };
    let delta = t.exp();
    let tr = transformed(u, delta)?;
    let y: Vec<f64> = tr.iter().map(|v| v.0).collect();
    let dk = kurtosis_grad(&y);
    let g_delta: f64 = dk.iter().zip(&tr).map(|(d, v)| d * v.2).sum();
    if !(g_delta.is_finite() && g_delta != 0.0) {
        return Err(Error::numeric("kurtosis insensitive to the heavy-tail parameter"));
    }
    let grad = dk.iter().zip(&tr).map(|(d, v)| -d * v.1 / g_delta).collect();
    Ok((delta, grad))
}

struct DeltaSolveOp {
    grad: Vec<f64>,
}

impl CustomOp for DeltaSolveOp {
    fn name(&self) -> &str {
        "delta_solve"
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, cotangent: &Tensor) -> Result<Vec<Tensor>> {
        let c = cotangent.item();
        Ok(vec![Tensor::new(
            inputs[0].dims().to_vec(),
            self.grad.iter().map(|g| c * g).collect(),
        )?])
    }
}

struct WDeltaOp {
    du: Vec<f64>,
    dd: Vec<f64>,
}

impl CustomOp for WDeltaOp {
    fn name(&self) -> &str {
        "w_delta"
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, cotangent: &Tensor) -> Result<Vec<Tensor>> {
        let g = cotangent.data();
        let gu = g.iter().zip(&self.du).map(|(a, b)| a * b).collect();
        let gd: f64 = g.iter().zip(&self.dd).map(|(a, b)| a * b).sum();
        Ok(vec![
            Tensor::new(inputs[0].dims().to_vec(), gu)?,
            Tensor::new(inputs[1].dims().to_vec(), vec![gd])?,
        ])
    }
}

fn delta_solve(t: &mut Tape, u: Var) -> Result<Var> {
    let (delta, grad) = fit_delta(t.value(u)?.data())?;
    t.custom(Box::new(DeltaSolveOp { grad }), &[u], Tensor::scalar(delta))
}

fn w_delta_op(t: &mut Tape, u: Var, delta: Var) -> Result<Var> {
    let d = t.value(delta)?.item();
    let uv = t.value(u)?;
    let tr = transformed(uv.data(), d)?;
    let y = Tensor::new(uv.dims().to_vec(), tr.iter().map(|v| v.0).collect())?;
    let op = WDeltaOp {
        du: tr.iter().map(|v| v.1).collect(),
        dd: tr.iter().map(|v| v.2).collect(),
    };
    t.custom(Box::new(op), &[u, delta], y)
}

/// `W_δ((s−μ)/σ)·σ + μ` on the tape.
fn apply_inverse(t: &mut Tape, s: Var, mu: Var, sigma: Var, delta: Option<Var>) -> Result<(Var, Var)> {
    let dims = t.value(s)?.dims().to_vec();
    let mb = t.broadcast(mu, &dims)?;
    let sb = t.broadcast(sigma, &dims)?;
    let c = t.sub(s, mb)?;
    let u = t.div(c, sb)?;
    let delta = match delta {
        Some(d) => d,
        None => delta_solve(t, u)?,
    };
    let y = w_delta_op(t, u, delta)?;
    let ys = t.mul(y, sb)?;
    Ok((t.add(ys, mb)?, delta))
}

fn std_dev(t: &mut Tape, x: Var) -> Result<Var> {
    let v = t.variance(x)?;
    t.sqrt(v)
}

pub(crate) fn lambert_taped(t: &mut Tape, s: Var, p: &LambertParams) -> Result<(Var, LambertFit)> {
    let sv = t.value(s)?;
    if sv.len() < MIN_SAMPLES {
        return Err(Error::shape(format!(
            "tail correction needs at least {MIN_SAMPLES} samples, got {}",
            sv.len()
        )));
    }
    let k0 = kurtosis(sv.data());
    if !k0.is_finite() {
        return Err(Error::Variance);
    }
    if k0 <= 3.0 {
        let fit = LambertFit {
            delta: 0.0,
            mu: sv.mean(),
            sigma: 0.0,
            iterations: 0,
            skipped: true,
        };
        return Ok((s, fit));
    }
    let mut mu = t.mean(s)?;
    let mut sigma = std_dev(t, s)?;
    let mut prev = (t.value(mu)?.item(), t.value(sigma)?.item(), 0.0);
    let mut delta = None;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..p.max_iter {
        iterations += 1;
        let (x, d) = apply_inverse(t, s, mu, sigma, None)?;
        mu = t.mean(x)?;
        sigma = std_dev(t, x)?;
        delta = Some(d);
        let cur = (t.value(mu)?.item(), t.value(sigma)?.item(), t.value(d)?.item());
        let step = ((cur.0 - prev.0).powi(2) + (cur.1 - prev.1).powi(2) + (cur.2 - prev.2).powi(2)).sqrt();
        prev = cur;
        if step < p.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::convergence("IGMM", p.max_iter, prev.2));
    }
    let (x, _) = apply_inverse(t, s, mu, sigma, delta)?;
    let fit = LambertFit {
        delta: prev.2,
        mu: prev.0,
        sigma: prev.1,
        iterations,
        skipped: false,
    };
    Ok((x, fit))
}

/// Applies the tail correction and reports the fitted parameters.
pub fn lambert_layer(s: &Tensor, p: &LambertParams) -> Result<(Tensor, LambertFit)> {
    let mut t = Tape::new();
    let l = t.leaf(s.clone());
    let (x, fit) = lambert_taped(&mut t, l, p)?;
    Ok((t.value(x)?.clone(), fit))
}

pub struct LambertStage(pub LambertParams);

impl Stage for LambertStage {
    fn name(&self) -> &str {
        "lambert"
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Pullback)> {
        let p = self.0;
        taped_forward(x, move |t, v| Ok(lambert_taped(t, v, &p)?.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn heavy(n: usize, delta: f64, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(&[n], &mut rng).map(|x| x * (0.5 * delta * x * x).exp())
    }

    #[test]
    fn kurtosis_gradient_matches_differences() {
        let y = heavy(40, 0.2, 1).into_data();
        let g = kurtosis_grad(&y);
        let h = 1e-6;
        for j in [0, 7, 39] {
            let mut a = y.clone();
            let mut b = y.clone();
            a[j] += h;
            b[j] -= h;
            let fd = (kurtosis(&a) - kurtosis(&b)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn delta_fit_hits_kurtosis_three() {
        let s = heavy(2000, 0.3, 2);
        let m = s.mean();
        let sd = (s.data().iter().map(|x| (x - m).powi(2)).sum::<f64>() / 1999.0).sqrt();
        let u: Vec<f64> = s.data().iter().map(|x| (x - m) / sd).collect();
        let (d, grad) = fit_delta(&u).unwrap();
        assert!(d > 0.0);
        assert!(excess_after(&u, d).abs() < 1e-10);
        assert!(grad.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn light_tails_are_skipped() {
        let s = Tensor::from_vec((0..64).map(|i| (i as f64 / 63.0) * 2.0 - 1.0).collect());
        let (x, fit) = lambert_layer(&s, &LambertParams::default()).unwrap();
        assert!(fit.skipped);
        assert_eq!(x, s);
    }

    #[test]
    fn output_is_monotone() {
        let s = heavy(500, 0.4, 3);
        let (x, fit) = lambert_layer(&s, &LambertParams::default()).unwrap();
        assert!(!fit.skipped && fit.delta > 0.0);
        let mut pairs: Vec<(f64, f64)> = s.data().iter().copied().zip(x.data().iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pairs.windows(2).all(|w| w[1].1 > w[0].1 || w[1].0 == w[0].0));
    }

    #[test]
    fn too_few_samples() {
        let s = Tensor::from_vec(vec![0.0, 1.0, 10.0]);
        assert!(matches!(lambert_layer(&s, &LambertParams::default()), Err(Error::Shape(_))));
    }
}
