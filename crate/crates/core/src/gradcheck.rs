//! Taylor-remainder gradient checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::stage::Stage;
use crate::tensor::Tensor;

/// Step sizes of the convergence test.
pub const FD_STEPS: [f64; 5] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdOutcome {
    /// Least-squares slope of `log E` against `log ε`.
    Slope(f64),
    /// Every remainder sits at the rounding floor; the model is exact.
    ExactToRoundoff,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub value: f64,
    pub errors: Vec<f64>,
    pub outcome: FdOutcome,
}

impl FdReport {
    pub fn slope(&self) -> Option<f64> {
        match self.outcome {
            FdOutcome::Slope(s) => Some(s),
            FdOutcome::ExactToRoundoff => None,
        }
    }

    /// Second-order agreement: slope within `[lo, hi]`, or exact to roundoff.
    pub fn passes(&self, lo: f64, hi: f64) -> bool {
        match self.outcome {
            FdOutcome::Slope(s) => s >= lo && s <= hi,
            FdOutcome::ExactToRoundoff => true,
        }
    }
}

/// Unit-norm random direction with the dims of `x`.
pub fn unit_direction(dims: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Tensor::randn(dims, &mut rng);
    let n = d.norm();
    d.scale(1.0 / n)
}

/// `E(ε) = |f(x+εδx) − f(x) − ε⟨∇f, δx⟩|` over [`FD_STEPS`] with a seeded
/// unit direction `δx`.
pub fn fd_convergence_test(
    f: impl Fn(&Tensor) -> Result<f64>,
    grad: &Tensor,
    x: &Tensor,
    seed: u64,
) -> Result<FdReport> {
    if grad.dims() != x.dims() {
        return Err(Error::shape(format!("gradient {:?} for input {:?}", grad.dims(), x.dims())));
    }
    let dx = unit_direction(x.dims(), seed);
    let f0 = f(x)?;
    let slope0 = grad.dot(&dx);
    let mut errors = Vec::with_capacity(FD_STEPS.len());
    for &eps in &FD_STEPS {
        let fe = f(&x.axpy(eps, &dx)?)?;
        errors.push((fe - f0 - eps * slope0).abs());
    }
    let floor = 1e2 * f64::EPSILON * f0.abs().max(1.0);
    let outcome = if errors.iter().all(|&e| e < floor) {
        FdOutcome::ExactToRoundoff
    } else {
        let pts: Vec<(f64, f64)> = FD_STEPS
            .iter()
            .zip(&errors)
            .map(|(&e, &r)| (e.ln(), r.max(f64::MIN_POSITIVE).ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        FdOutcome::Slope(sxy / sxx)
    };
    Ok(FdReport {
        value: f0,
        errors,
        outcome,
    })
}

/// Convergence test of a stage through the scalar probe
/// `h(y) = ⟨t, y⟩ + ½‖y − y₀‖²`, with `y₀ = stage(x)` and `t` a seeded unit
/// vector. The quadratic term exercises curvature while keeping `|h|` of
/// order one.
pub fn stage_fd_test(stage: &dyn Stage, x: &Tensor, seed: u64) -> Result<FdReport> {
    let (y0, pb) = stage.forward(x)?;
    let t = unit_direction(y0.dims(), seed ^ 0x9e37_79b9_7f4a_7c15);
    let probe = |y: &Tensor| -> Result<f64> {
        let r = y.axpy(-1.0, &y0)?;
        Ok(t.dot(y) + 0.5 * r.dot(&r))
    };
    // at x the residual vanishes, so the probe gradient is t
    let grad = pb.apply(&t)?;
    fd_convergence_test(|xx| probe(&stage.apply(xx)?), &grad, x, seed)
}

/// Relative mismatch of the dot test `⟨J δx, ȳ⟩` vs `⟨δx, Jᵀȳ⟩`, with the
/// Jacobian action measured by Richardson-extrapolated central differences.
pub fn stage_dot_test(stage: &dyn Stage, x: &Tensor, seed: u64, h: f64) -> Result<f64> {
    let (y0, pb) = stage.forward(x)?;
    let dx = unit_direction(x.dims(), seed);
    let ybar = unit_direction(y0.dims(), seed.wrapping_add(1));
    let cd = |h: f64| -> Result<f64> {
        let yp = stage.apply(&x.axpy(h, &dx)?)?;
        let ym = stage.apply(&x.axpy(-h, &dx)?)?;
        Ok(yp.axpy(-1.0, &ym)?.dot(&ybar) / (2.0 * h))
    };
    let jdx = (4.0 * cd(0.5 * h)? - cd(h)?) / 3.0;
    let rhs = dx.dot(&pb.apply(&ybar)?);
    Ok((jdx - rhs).abs() / jdx.abs().max(rhs.abs()).max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_gives_slope_two() {
        let x = unit_direction(&[10], 3).scale(2.0);
        let r = fd_convergence_test(|y| Ok(y.dot(y)), &x.scale(2.0), &x, 5).unwrap();
        let s = r.slope().unwrap();
        assert!((s - 2.0).abs() <= 0.1, "{s}");
    }

    #[test]
    fn scaled_gradient_gives_slope_one() {
        let x = unit_direction(&[10], 3).scale(2.0);
        let r = fd_convergence_test(|y| Ok(y.dot(y)), &x.scale(1.8), &x, 5).unwrap();
        let s = r.slope().unwrap();
        assert!((s - 1.0).abs() <= 0.1, "{s}");
    }

    #[test]
    fn linear_function_is_exact() {
        let x = unit_direction(&[10], 3);
        let a = unit_direction(&[10], 4);
        let r = fd_convergence_test(|y| Ok(a.dot(y)), &a, &x, 5).unwrap();
        assert_eq!(r.outcome, FdOutcome::ExactToRoundoff);
    }
}
