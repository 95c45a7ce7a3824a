//! Latent reparameterizations: the spherical constraint, Cayley orthogonal
//! matrices acting on a frozen latent, and the Gaussianization layers.

use crate::error::{Error, Result};
use crate::gaussianize::{pipeline, GaussianizeConfig, PatchPartition};
use crate::linalg;
use crate::stage::{check_cotangent, Chain, Pullback, Stage};
use crate::tensor::Tensor;

/// Largest block size accepted by the orthogonal reparameterization.
pub const MAX_ORTHO_DIM: usize = 4096;

/// `γ·√n·v/‖v‖`.
pub struct SphericalStage {
    pub gamma: f64,
}

pub fn spherical(v: &Tensor, gamma: f64) -> Result<Tensor> {
    SphericalStage { gamma }.apply(v)
}

impl Stage for SphericalStage {
    fn name(&self) -> &str {
        "spherical"
    }

    fn forward(&self, v: &Tensor) -> Result<(Tensor, Pullback)> {
        let nrm = v.norm();
        if nrm == 0.0 || !nrm.is_finite() {
            return Err(Error::Norm);
        }
        let c = self.gamma * (v.len() as f64).sqrt() / nrm;
        let u = v.scale(1.0 / nrm);
        let y = v.scale(c);
        let dims = v.dims().to_vec();
        let pb = Pullback::new(move |g| {
            check_cotangent(&dims, g)?;
            let ug = u.dot(g);
            g.zip_map(&u, |gi, ui| c * (gi - ui * ug))
        });
        Ok((y, pb))
    }
}

/// Number of free parameters of a `dim × dim` skew-symmetric matrix.
pub fn skew_param_count(dim: usize) -> usize {
    dim * dim.saturating_sub(1) / 2
}

/// Skew-symmetric `W = Pᵀ − P` from the strictly lower-triangular entries of
/// `P`, listed row by row.
pub fn skew_from_params(dim: usize, params: &[f64]) -> Result<Tensor> {
    if params.len() != skew_param_count(dim) {
        return Err(Error::shape(format!(
            "{} parameters for a {dim}x{dim} skew matrix (need {})",
            params.len(),
            skew_param_count(dim)
        )));
    }
    let mut w = Tensor::zeros(&[dim, dim]);
    let mut k = 0;
    for i in 0..dim {
        for j in 0..i {
            w.set2(j, i, params[k]);
            w.set2(i, j, -params[k]);
            k += 1;
        }
    }
    Ok(w)
}

/// Cayley transform `R = (I + W)(I − W)⁻¹` with `(I − W)⁻¹`.
fn cayley_parts(dim: usize, params: &[f64]) -> Result<(Tensor, Tensor)> {
    let w = skew_from_params(dim, params)?;
    let eye = Tensor::identity(dim);
    let m = linalg::solve(&eye.axpy(-1.0, &w)?, &eye)?;
    let r = eye.axpy(1.0, &w)?.matmul(&m)?;
    Ok((r, m))
}

pub fn cayley(dim: usize, params: &[f64]) -> Result<Tensor> {
    Ok(cayley_parts(dim, params)?.0)
}

/// Parameter cotangent from `W̄ = (I + R)ᵀ R̄ (I − W)⁻ᵀ`.
fn cayley_vjp(dim: usize, r: &Tensor, m: &Tensor, rbar: &Tensor) -> Result<Vec<f64>> {
    let ipr = Tensor::identity(dim).axpy(1.0, r)?;
    let wbar = ipr.transpose()?.matmul(rbar)?.matmul(&m.transpose()?)?;
    let mut out = Vec::with_capacity(skew_param_count(dim));
    for i in 0..dim {
        for j in 0..i {
            out.push(wbar.get2(j, i) - wbar.get2(i, j));
        }
    }
    Ok(out)
}

/// Parameters `[D(D−1)/2]` → orthogonal `D × D` matrix.
pub struct CayleyStage {
    pub dim: usize,
}

impl Stage for CayleyStage {
    fn name(&self) -> &str {
        "cayley"
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Pullback)> {
        let dim = self.dim;
        let (r, m) = cayley_parts(dim, x.data())?;
        let rc = r.clone();
        let pdims = x.dims().to_vec();
        let pb = Pullback::new(move |g| {
            check_cotangent(&[dim, dim], g)?;
            Tensor::new(pdims.clone(), cayley_vjp(dim, &rc, &m, g)?)
        });
        Ok((r, pb))
    }
}

/// `z = assemble(R · partition(v_fixed))` with `R` the Cayley matrix of the
/// parameters; `v_fixed` is frozen.
pub struct OrthogonalReparam {
    part: PatchPartition,
    v_patches: Tensor,
}

impl OrthogonalReparam {
    pub fn new(part: PatchPartition, v_fixed: &Tensor) -> Result<Self> {
        let d = part.patch_dim();
        if d > MAX_ORTHO_DIM {
            return Err(Error::Dimension(format!(
                "orthogonal block of dimension {d} exceeds {MAX_ORTHO_DIM}"
            )));
        }
        if v_fixed.dims() != part.dims() {
            return Err(Error::shape(format!(
                "frozen latent {:?} does not match partition {:?}",
                v_fixed.dims(),
                part.dims()
            )));
        }
        let v_patches = part.partition(v_fixed)?;
        Ok(Self { part, v_patches })
    }

    pub fn param_count(&self) -> usize {
        skew_param_count(self.part.patch_dim())
    }
}

impl Stage for OrthogonalReparam {
    fn name(&self) -> &str {
        "orthogonal"
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Pullback)> {
        let dim = self.part.patch_dim();
        let (r, m) = cayley_parts(dim, x.data())?;
        let z = self.part.assemble(&r.matmul(&self.v_patches)?)?;
        let part = self.part.clone();
        let vt = self.v_patches.transpose()?;
        let pdims = x.dims().to_vec();
        let zdims = z.dims().to_vec();
        let pb = Pullback::new(move |g| {
            check_cotangent(&zdims, g)?;
            let rbar = part.partition(g)?.matmul(&vt)?;
            Tensor::new(pdims.clone(), cayley_vjp(dim, &r, &m, &rbar)?)
        });
        Ok((z, pb))
    }
}

/// The Gaussianization-layer latent map `h†`.
pub fn glayer_reparam(part: &PatchPartition, cfg: &GaussianizeConfig) -> Result<Chain> {
    pipeline(part, cfg)
}
