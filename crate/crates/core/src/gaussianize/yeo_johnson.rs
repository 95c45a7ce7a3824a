//! Yeo–Johnson power transform with a single maximum-likelihood `λ` shared
//! by all entries. The gradient through the fitted `λ` uses the implicit
//! function theorem on the stationarity condition of the likelihood.

use crate::error::{Error, Result};
use crate::scalar::{brent_minimize, brent_root, Bracket, DEFAULT_MAX_ITER};
use crate::stage::{check_cotangent, Pullback, Stage};
use crate::tensor::Tensor;

pub const LAMBDA_LO: f64 = -5.0;
pub const LAMBDA_HI: f64 = 5.0;
pub const MIN_SAMPLES: usize = 8;

/// `(eˣ−1)/x` and its first two derivatives.
fn phi1(x: f64) -> (f64, f64, f64) {
    if x.abs() < 1.0 {
        // coefficients 1/(k+1)!
        let mut c = 1.0;
        let (mut f, mut d1, mut d2) = (0.0, 0.0, 0.0);
        let mut xp = [1.0f64; 3]; // x^k, x^(k-1), x^(k-2)
        for k in 0..30 {
            c /= (k + 1) as f64;
            let kf = k as f64;
            f += c * xp[0];
            if k >= 1 {
                d1 += kf * c * xp[1];
            }
            if k >= 2 {
                d2 += kf * (kf - 1.0) * c * xp[2];
            }
            xp[0] *= x;
            if k >= 1 {
                xp[1] *= x;
            }
            if k >= 2 {
                xp[2] *= x;
            }
        }
        (f, d1, d2)
    } else {
        let e = x.exp();
        let em1 = x.exp_m1();
        let f = em1 / x;
        let d1 = (x * e - em1) / (x * x);
        let d2 = (x * x * e - 2.0 * x * e + 2.0 * em1) / (x * x * x);
        (f, d1, d2)
    }
}

/// The transform and its partial derivatives at one entry.
#[derive(Debug, Clone, Copy)]
struct Terms {
    s: f64,
    s_l: f64,
    s_ll: f64,
    s_p: f64,
    s_lp: f64,
}

fn terms(p: f64, lambda: f64) -> Terms {
    if p >= 0.0 {
        let t = p.ln_1p();
        let (f, d1, d2) = phi1(lambda * t);
        let sp = ((lambda - 1.0) * t).exp();
        Terms {
            s: t * f,
            s_l: t * t * d1,
            s_ll: t * t * t * d2,
            s_p: sp,
            s_lp: sp * t,
        }
    } else {
        let t = (-p).ln_1p();
        let mu = 2.0 - lambda;
        let (f, d1, d2) = phi1(mu * t);
        let sp = ((1.0 - lambda) * t).exp();
        Terms {
            s: -t * f,
            s_l: t * t * d1,
            s_ll: -t * t * t * d2,
            s_p: sp,
            s_lp: -sp * t,
        }
    }
}

/// Yeo–Johnson transform of one value.
pub fn yeo_johnson(p: f64, lambda: f64) -> f64 {
    terms(p, lambda).s
}

pub fn yeo_johnson_forward(p: &Tensor, lambda: f64) -> Tensor {
    p.map(|x| yeo_johnson(x, lambda))
}

fn jacobian_sum(p: &[f64]) -> f64 {
    p.iter().map(|&x| x.signum() * x.abs().ln_1p()).sum()
}

fn population_var(s: impl Iterator<Item = f64> + Clone, n: f64) -> f64 {
    let m = s.clone().sum::<f64>() / n;
    s.map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

/// Profile log-likelihood of `λ`.
pub fn yeo_johnson_loglik(p: &[f64], lambda: f64) -> f64 {
    let n = p.len() as f64;
    let var = population_var(p.iter().map(|&x| yeo_johnson(x, lambda)), n);
    -0.5 * n * var.ln() + (lambda - 1.0) * jacobian_sum(p)
}

/// Derivative of the log-likelihood in `λ`.
fn score(p: &[f64], lambda: f64, jac: f64) -> f64 {
    let n = p.len() as f64;
    let ts: Vec<Terms> = p.iter().map(|&x| terms(x, lambda)).collect();
    let sm = ts.iter().map(|t| t.s).sum::<f64>() / n;
    let var = ts.iter().map(|t| (t.s - sm) * (t.s - sm)).sum::<f64>() / n;
    let dvar = 2.0 / n * ts.iter().map(|t| (t.s - sm) * t.s_l).sum::<f64>();
    -0.5 * n * dvar / var + jac
}

/// Maximum-likelihood `λ` over `[-5, 5]`: Brent minimization followed by a
/// root polish of the score.
pub fn fit_lambda(p: &[f64]) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::shape("power parameter needs at least two samples"));
    }
    let n = p.len() as f64;
    if population_var(p.iter().copied(), n) == 0.0 {
        return Err(Error::Variance);
    }
    let jac = jacobian_sum(p);
    let full = Bracket::new(LAMBDA_LO, LAMBDA_HI)?;
    let neg = |l: f64| {
        let var = population_var(p.iter().map(|&x| yeo_johnson(x, l)), n);
        0.5 * var.ln() - (l - 1.0) * jac / n
    };
    let lm = brent_minimize(neg, full, 1e-10, DEFAULT_MAX_ITER)?;
    let edge = 1e-6;
    if lm <= LAMBDA_LO + edge || lm >= LAMBDA_HI - edge {
        return Err(Error::convergence("power transform parameter (optimum outside [-5, 5])", 0, lm));
    }
    let g = |l: f64| score(p, l, jac);
    let g0 = g(lm);
    if g0 == 0.0 {
        return Ok(lm);
    }
    let mut h = 1e-6;
    while h < 10.0 {
        let lo = (lm - h).max(LAMBDA_LO);
        let hi = (lm + h).min(LAMBDA_HI);
        if g(lo).signum() != g(hi).signum() {
            return brent_root(g, Bracket::new(lo, hi)?, 0.0, DEFAULT_MAX_ITER);
        }
        h *= 4.0;
    }
    Err(Error::convergence("power transform score root", 0, lm))
}

/// Forward pass on flat data: `(s, λ, ∂λ/∂p)`.
fn forward_flat(p: &[f64]) -> Result<(Vec<f64>, f64, Vec<f64>, Vec<Terms>)> {
    check_samples(p.len())?;
    let lambda = fit_lambda(p)?;
    let n = p.len() as f64;
    let ts: Vec<Terms> = p.iter().map(|&x| terms(x, lambda)).collect();
    let sm = ts.iter().map(|t| t.s).sum::<f64>() / n;
    let slm = ts.iter().map(|t| t.s_l).sum::<f64>() / n;
    let var = ts.iter().map(|t| (t.s - sm) * (t.s - sm)).sum::<f64>() / n;
    let dvar = 2.0 / n * ts.iter().map(|t| (t.s - sm) * t.s_l).sum::<f64>();
    let ddvar = 2.0 / n
        * ts
            .iter()
            .map(|t| (t.s_l - slm) * (t.s_l - slm) + (t.s - sm) * t.s_ll)
            .sum::<f64>();
    let l_ll = -0.5 * n * (ddvar / var - (dvar / var).powi(2));
    if !(l_ll.is_finite() && l_ll != 0.0) {
        return Err(Error::numeric("flat likelihood curvature at the fitted power parameter"));
    }
    let dl: Vec<f64> = ts
        .iter()
        .zip(p)
        .map(|(t, &x)| {
            let dv = 2.0 / n * (t.s - sm) * t.s_p;
            let ddv = 2.0 / n * (t.s_p * (t.s_l - slm) + (t.s - sm) * t.s_lp);
            let l_p = -0.5 * n * (ddv / var - dvar * dv / (var * var)) + 1.0 / (1.0 + x.abs());
            -l_p / l_ll
        })
        .collect();
    let s = ts.iter().map(|t| t.s).collect();
    Ok((s, lambda, dl, ts))
}

fn check_samples(n: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(Error::shape(format!(
            "power transform layer needs at least {MIN_SAMPLES} samples, got {n}"
        )));
    }
    Ok(())
}

/// Fits `λ` and applies the transform; returns the output and `λ`.
pub fn yeo_johnson_layer(p: &Tensor) -> Result<(Tensor, f64)> {
    check_samples(p.len())?;
    let lambda = fit_lambda(p.data())?;
    Ok((yeo_johnson_forward(p, lambda), lambda))
}

pub struct YeoJohnsonStage;

impl Stage for YeoJohnsonStage {
    fn name(&self) -> &str {
        "yj"
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Pullback)> {
        let (s, _lambda, dl, ts) = forward_flat(x.data())?;
        let y = Tensor::new(x.dims().to_vec(), s)?;
        let dims = x.dims().to_vec();
        let pb = Pullback::new(move |g| {
            check_cotangent(&dims, g)?;
            let gl: f64 = g.data().iter().zip(&ts).map(|(gi, t)| gi * t.s_l).sum();
            let data = g
                .data()
                .iter()
                .zip(&ts)
                .zip(&dl)
                .map(|((gi, t), d)| gi * t.s_p + gl * d)
                .collect();
            Tensor::new(dims.clone(), data)
        });
        Ok((y, pb))
    }
}
