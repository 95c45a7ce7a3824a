//! One-dimensional numerical kernels: Brent minimization and root finding,
//! the principal branch of the Lambert W function, and the heavy-tail
//! inverse `W_δ`.

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Search interval `[lo, hi]` with `lo < hi`, both finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    lo: f64,
    hi: f64,
}

impl Bracket {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidBracket { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

fn eval(f: &mut impl FnMut(f64) -> f64, x: f64) -> Result<f64> {
    let y = f(x);
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::Evaluation { x })
    }
}

/// Brent's bracketed minimizer (golden section with parabolic steps).
///
/// The returned point never has a larger value than either bracket end.
pub fn brent_minimize(
    mut f: impl FnMut(f64) -> f64,
    b: Bracket,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    const GOLD: f64 = 0.381_966_011_250_105_1; // (3 - sqrt 5) / 2
    let rel = f64::EPSILON.sqrt();

    let (mut a, mut bb) = (b.lo, b.hi);
    let mut x = a + GOLD * (bb - a);
    let (mut w, mut v) = (x, x);
    let mut fx = eval(&mut f, x)?;
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);

    let mut converged = false;
    for _ in 0..max_iter {
        let m = 0.5 * (a + bb);
        let tol1 = rel * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (bb - a) {
            converged = true;
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (bb - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || bb - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { bb - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = eval(&mut f, u)?;
        if fu <= fx {
            if u < x {
                bb = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                bb = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    if !converged {
        return Err(Error::convergence("brent_minimize", max_iter, x));
    }
    // The interior search never probes the ends; honour monotone cases.
    let flo = eval(&mut f, b.lo)?;
    let fhi = eval(&mut f, b.hi)?;
    if flo < fx && flo <= fhi {
        Ok(b.lo)
    } else if fhi < fx {
        Ok(b.hi)
    } else {
        Ok(x)
    }
}

/// Brent's bracketed root finder (bisection, secant and inverse quadratic
/// interpolation). Stops when the bracket shrinks below `tol` (plus a few
/// ulps of the iterate) or on an exact zero.
pub fn brent_root(
    mut g: impl FnMut(f64) -> f64,
    b: Bracket,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    if !(tol >= 0.0) {
        return Err(Error::Domain(format!("tolerance must be non-negative, got {tol}")));
    }
    let (mut a, mut bb) = (b.lo, b.hi);
    let mut fa = eval(&mut g, a)?;
    let mut fb = eval(&mut g, bb)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(bb);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Bracket { lo: b.lo, hi: b.hi });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = bb - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = bb - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = bb;
            bb = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * bb.abs() + 0.5 * tol;
        let xm = 0.5 * (c - bb);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(bb.clamp(b.lo, b.hi));
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (bb - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = bb;
        fa = fb;
        bb += if d.abs() > tol1 {
            d
        } else if xm > 0.0 {
            tol1
        } else {
            -tol1
        };
        fb = eval(&mut g, bb)?;
    }
    Err(Error::convergence("brent_root", max_iter, bb))
}

/// Principal branch `W₀(q)` of the Lambert W function, solving `t·eᵗ = q`
/// with `t ≥ -1`, by Halley iteration.
pub fn lambert_w0(q: f64) -> Result<f64> {
    const BRANCH: f64 = -1.0 / std::f64::consts::E;
    if q.is_nan() || q < BRANCH - 4.0 * f64::EPSILON {
        return Err(Error::Domain(format!("lambert_w0 undefined at {q}")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if q.is_infinite() {
        return Ok(f64::INFINITY);
    }
    if q <= BRANCH {
        return Ok(-1.0);
    }
    let mut t = if q < -0.25 {
        // series about the branch point
        let p = (2.0 * (std::f64::consts::E * q + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else {
        q.ln_1p()
    };
    for _ in 0..64 {
        let et = t.exp();
        let f = t * et - q;
        if f == 0.0 {
            return Ok(t);
        }
        let t1 = t + 1.0;
        let denom = et * t1 - (t + 2.0) * f / (2.0 * t1);
        let step = f / denom;
        if !step.is_finite() {
            break;
        }
        t -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + t.abs()) {
            return Ok(t.max(-1.0));
        }
    }
    if t.is_finite() {
        Ok(t.max(-1.0))
    } else {
        Err(Error::numeric(format!("lambert_w0 failed at {q}")))
    }
}

/// `W_δ(u) = sign(u)·sqrt(W₀(δu²)/δ)`, the inverse of `s = u·exp(δu²/2)`.
/// The identity for `δ = 0`.
pub fn w_delta(u: f64, delta: f64) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::Domain(format!("heavy-tail parameter must be >= 0, got {delta}")));
    }
    if delta == 0.0 || u == 0.0 {
        return Ok(u);
    }
    let w = lambert_w0(delta * u * u)?;
    Ok(u.signum() * (w / delta).sqrt())
}

/// `W_δ(u)` with its partial derivatives `(y, ∂y/∂u, ∂y/∂δ)`.
///
/// Both derivatives follow from differentiating `u = y·exp(δy²/2)`.
pub fn w_delta_with_derivs(u: f64, delta: f64) -> Result<(f64, f64, f64)> {
    let y = w_delta(u, delta)?;
    let y2 = y * y;
    let g = 1.0 + delta * y2;
    let dy_du = (-0.5 * delta * y2).exp() / g;
    let dy_dd = -y2 * y / (2.0 * g);
    Ok((y, dy_du, dy_dd))
}
