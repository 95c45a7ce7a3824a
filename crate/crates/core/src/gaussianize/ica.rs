//! Damped FastICA with symmetric decorrelation, recorded on the tape so the
//! executed iterations can be differentiated.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::stage::{taped_forward, Pullback, Stage};
use crate::tensor::Tensor;

use super::whiten::{div_sqrt, top_eigenvalue};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaParams {
    /// Damping of the fixed-point update.
    pub alpha: f64,
    /// Outer fixed-point iterations.
    pub max_outer: usize,
    /// Decorrelation iterations per outer step.
    pub max_inner: usize,
    pub tol: f64,
}

impl Default for IcaParams {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            max_outer: 10,
            max_inner: 100,
            tol: 1e-5,
        }
    }
}

fn finite(t: &Tape, v: Var) -> Result<Tensor> {
    let x = t.value(v)?;
    if !x.is_finite() {
        return Err(Error::numeric("non-finite value in ICA iteration"));
    }
    Ok(x.clone())
}

/// `W ← W/√‖WᵀW‖₂`, then `W ← 3/2 W − 1/2 W Wᵀ W` until the step falls
/// below `tol` or `max_inner` is reached.
fn decorrelate(t: &mut Tape, w: Var, p: &IcaParams) -> Result<Var> {
    let wt = t.transpose(w)?;
    let m = t.matmul(wt, w)?;
    let top = top_eigenvalue(t, m)?;
    let mut w = div_sqrt(t, w, top)?;
    let mut w0 = finite(t, w)?;
    for _ in 1..p.max_inner {
        let wt = t.transpose(w)?;
        let ww = t.matmul(w, wt)?;
        let cube = t.matmul(ww, w)?;
        let a = t.scale(w, 1.5)?;
        let b = t.scale(cube, 0.5)?;
        w = t.sub(a, b)?;
        let wv = finite(t, w)?;
        if wv.axpy(-1.0, &w0)?.norm() < p.tol {
            break;
        }
        w0 = wv;
    }
    Ok(w)
}

/// Records the ICA layer on `t`; returns `(P, W)` with `P = WᵀV`.
pub(crate) fn ica_taped(t: &mut Tape, v: Var, p: &IcaParams) -> Result<(Var, Var)> {
    let (d, n) = {
        let x = t.value(v)?;
        if x.dims().len() != 2 {
            return Err(Error::shape(format!("patch matrix expected, got {:?}", x.dims())));
        }
        (x.rows(), x.cols())
    };
    let mut w = t.leaf(Tensor::identity(d));
    let mut w_star = Tensor::identity(d);
    for _ in 0..p.max_outer {
        let wt = t.transpose(w)?;
        let y = t.matmul(wt, v)?;
        let phi = t.tanh(y)?;
        // φ' = 1 − tanh²
        let phi2 = t.mul(phi, phi)?;
        let ones = t.leaf(Tensor::filled(&[d, n], 1.0));
        let dphi = t.sub(ones, phi2)?;
        let phit = t.transpose(phi)?;
        let vp = t.matmul(v, phit)?;
        let a = t.scale(vp, p.alpha)?;
        let rs = t.sum_axis(dphi, 1)?;
        let rv = t.reshape(rs, &[d])?;
        let dg = t.diag_matrix(rv)?;
        let b = t.matmul(w, dg)?;
        let diff = t.sub(a, b)?;
        let upd = t.scale(diff, 1.0 / n as f64)?;
        finite(t, upd)?;
        w = decorrelate(t, upd, p)?;
        let wv = t.value(w)?.clone();
        if wv.axpy(-1.0, &w_star)?.norm() < p.tol {
            break;
        }
        w_star = wv;
    }
    let wt = t.transpose(w)?;
    let out = t.matmul(wt, v)?;
    Ok((out, w))
}

/// Runs the ICA layer on a whitened `D × N` matrix and returns `(P, W)`.
pub fn ica_layer(v: &Tensor, p: &IcaParams) -> Result<(Tensor, Tensor)> {
    let mut t = Tape::new();
    let l = t.leaf(v.clone());
    let (out, w) = ica_taped(&mut t, l, p)?;
    Ok((t.value(out)?.clone(), t.value(w)?.clone()))
}

pub struct IcaStage(pub IcaParams);

impl Stage for IcaStage {
    fn name(&self) -> &str {
        "ica"
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Pullback)> {
        let p = self.0;
        taped_forward(x, move |t, v| Ok(ica_taped(t, v, &p)?.0))
    }
}
