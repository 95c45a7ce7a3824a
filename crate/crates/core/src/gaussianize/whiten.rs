//! Whitening of patch matrices: ZCA through an eigen-decomposition, or the
//! Newton–Schulz iteration towards `C^{-1/2}`.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::stage::{taped_forward, Pullback, Stage};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Whitening {
    Zca,
    Iterative,
}

impl std::str::FromStr for Whitening {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zca" => Ok(Whitening::Zca),
            "iter" | "iterative" => Ok(Whitening::Iterative),
            other => Err(Error::Config(format!("unknown whitening mode '{other}'"))),
        }
    }
}

fn check_rank(v: &Tensor) -> Result<(usize, usize)> {
    if v.dims().len() != 2 {
        return Err(Error::shape(format!("patch matrix expected, got {:?}", v.dims())));
    }
    let (d, n) = (v.rows(), v.cols());
    if n < d || n < 2 {
        return Err(Error::Rank { dim: d, patches: n });
    }
    Ok((d, n))
}

/// Subtracts the mean of each row.
pub(crate) fn center_rows(t: &mut Tape, v: Var) -> Result<Var> {
    let dims = t.value(v)?.dims().to_vec();
    let s = t.sum_axis(v, 1)?;
    let m = t.scale(s, 1.0 / dims[1] as f64)?;
    let mb = t.broadcast(m, &dims)?;
    t.sub(v, mb)
}

/// `(1-η)·VVᵀ/(N-1) + ηI` of a centered patch matrix.
pub(crate) fn blended_covariance(t: &mut Tape, vc: Var, eta: f64) -> Result<Var> {
    let (d, n) = {
        let x = t.value(vc)?;
        (x.rows(), x.cols())
    };
    let vt = t.transpose(vc)?;
    let g = t.matmul(vc, vt)?;
    let gs = t.scale(g, (1.0 - eta) / (n - 1) as f64)?;
    let eye = t.leaf(Tensor::identity(d).scale(eta));
    t.add(gs, eye)
}

/// Largest eigenvalue of a symmetric matrix, as a taped scalar.
pub(crate) fn top_eigenvalue(t: &mut Tape, m: Var) -> Result<Var> {
    let mt = t.transpose(m)?;
    let s = t.add(m, mt)?;
    let sym = t.scale(s, 0.5)?;
    let (vals, _) = t.symeig(sym)?;
    let d = t.value(vals)?.len();
    let mut pick = vec![0.0; d];
    pick[d - 1] = 1.0;
    let sel = t.leaf(Tensor::from_vec(pick));
    let prod = t.mul(vals, sel)?;
    t.sum(prod)
}

/// Divides a matrix by the square root of a taped scalar.
pub(crate) fn div_sqrt(t: &mut Tape, w: Var, s: Var) -> Result<Var> {
    let dims = t.value(w)?.dims().to_vec();
    let r = t.powf(s, -0.5)?;
    let rb = t.broadcast(r, &dims)?;
    t.mul(w, rb)
}

/// `D Λ^{-1/2} Dᵀ` for a taped covariance.
pub(crate) fn zca_matrix_taped(t: &mut Tape, c: Var) -> Result<Var> {
    let (vals, vecs) = t.symeig(c)?;
    if t.value(vals)?.data()[0] <= 0.0 {
        return Err(Error::numeric("covariance is not positive definite"));
    }
    let inv = t.powf(vals, -0.5)?;
    let dm = t.diag_matrix(inv)?;
    let ud = t.matmul(vecs, dm)?;
    let ut = t.transpose(vecs)?;
    t.matmul(ud, ut)
}

/// Newton–Schulz iteration `W ← 3/2 W − 1/2 W Wᵀ C W` from a rescaled identity.
pub(crate) fn iterative_matrix_taped(t: &mut Tape, c: Var, tol: f64, max_iter: usize) -> Result<Var> {
    let d = t.value(c)?.rows();
    let mut w = t.leaf(Tensor::identity(d));
    let wt = t.transpose(w)?;
    let a = t.matmul(wt, c)?;
    let m = t.matmul(a, w)?;
    let top = top_eigenvalue(t, m)?;
    w = div_sqrt(t, w, top)?;
    for _ in 0..max_iter {
        let w0 = t.value(w)?.clone();
        let wt = t.transpose(w)?;
        let ww = t.matmul(w, wt)?;
        let wwc = t.matmul(ww, c)?;
        let cube = t.matmul(wwc, w)?;
        let a = t.scale(w, 1.5)?;
        let b = t.scale(cube, 0.5)?;
        w = t.sub(a, b)?;
        let wv = t.value(w)?;
        if !wv.is_finite() {
            return Err(Error::numeric("non-finite whitening matrix"));
        }
        if wv.axpy(-1.0, &w0)?.norm() < tol {
            return Ok(w);
        }
    }
    let best = t.value(w)?.norm();
    Err(Error::convergence("iterative whitening", max_iter, best))
}

/// Whitening recorded on `t`; returns the whitened patch matrix.
pub(crate) fn whiten_taped(
    t: &mut Tape,
    v: Var,
    mode: Whitening,
    eta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Var> {
    check_rank(t.value(v)?)?;
    let vc = center_rows(t, v)?;
    let c = blended_covariance(t, vc, eta)?;
    match mode {
        Whitening::Zca => {
            let w = zca_matrix_taped(t, c)?;
            t.matmul(w, vc)
        }
        Whitening::Iterative => {
            let w = iterative_matrix_taped(t, c, tol, max_iter)?;
            let wt = t.transpose(w)?;
            t.matmul(wt, vc)
        }
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Config(format!("covariance blend must lie in (0,1), got {eta}")));
    }
    Ok(())
}

/// ZCA whitening of a `D × N` patch matrix.
pub fn zca_whiten(v: &Tensor, eta: f64) -> Result<Tensor> {
    check_eta(eta)?;
    let mut t = Tape::new();
    let l = t.leaf(v.clone());
    let out = whiten_taped(&mut t, l, Whitening::Zca, eta, 0.0, 0)?;
    Ok(t.value(out)?.clone())
}

/// The symmetric whitening matrix used by [`zca_whiten`].
pub fn zca_matrix(v: &Tensor, eta: f64) -> Result<Tensor> {
    check_eta(eta)?;
    check_rank(v)?;
    let mut t = Tape::new();
    let l = t.leaf(v.clone());
    let vc = center_rows(&mut t, l)?;
    let c = blended_covariance(&mut t, vc, eta)?;
    let w = zca_matrix_taped(&mut t, c)?;
    Ok(t.value(w)?.clone())
}

/// The blended covariance `(1-η)·VcVcᵀ/(N-1) + ηI` of the centered matrix.
pub fn blended_cov(v: &Tensor, eta: f64) -> Result<Tensor> {
    check_rank(v)?;
    let mut t = Tape::new();
    let l = t.leaf(v.clone());
    let vc = center_rows(&mut t, l)?;
    let c = blended_covariance(&mut t, vc, eta)?;
    Ok(t.value(c)?.clone())
}

/// Newton–Schulz whitening matrix for a given covariance.
pub fn iterative_whitening_matrix(c: &Tensor, tol: f64, max_iter: usize) -> Result<Tensor> {
    let mut t = Tape::new();
    let l = t.leaf(c.clone());
    let w = iterative_matrix_taped(&mut t, l, tol, max_iter)?;
    Ok(t.value(w)?.clone())
}

/// Iterative whitening of a `D × N` patch matrix.
pub fn iterative_whiten(v: &Tensor, eta: f64, tol: f64, max_iter: usize) -> Result<Tensor> {
    check_eta(eta)?;
    let mut t = Tape::new();
    let l = t.leaf(v.clone());
    let out = whiten_taped(&mut t, l, Whitening::Iterative, eta, tol, max_iter)?;
    Ok(t.value(out)?.clone())
}

pub struct WhitenStage {
    pub mode: Whitening,
    pub eta: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Stage for WhitenStage {
    fn name(&self) -> &str {
        match self.mode {
            Whitening::Zca => "zca",
            Whitening::Iterative => "iterwhite",
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Pullback)> {
        check_eta(self.eta)?;
        taped_forward(x, |t, v| whiten_taped(t, v, self.mode, self.eta, self.tol, self.max_iter))
    }
}
