//! Gaussianization layers: whitening, ICA, a shared power transform, a
//! shared tail correction and standardization, applied to non-overlapping
//! patches of a latent tensor.

mod diagnostics;
mod ica;
mod lambert;
mod partition;
mod standardize;
mod whiten;
mod yeo_johnson;

pub use diagnostics::{
    diagnostics, GaussianityDiagnostics, MAX_CORRELATION, MAX_EXCESS_KURTOSIS, MAX_SKEW, NORM_BAND,
};
pub use ica::{ica_layer, IcaParams, IcaStage};
pub use lambert::{fit_delta, kurtosis, lambert_layer, LambertFit, LambertParams, LambertStage};
pub use partition::{parse_patch, AssembleStage, PartitionStage, PatchPartition};
pub use standardize::{standardize, StandardizeStage};
pub use whiten::{
    blended_cov, iterative_whiten, iterative_whitening_matrix, zca_matrix, zca_whiten, WhitenStage,
    Whitening,
};
pub use yeo_johnson::{
    fit_lambda, yeo_johnson, yeo_johnson_forward, yeo_johnson_layer, yeo_johnson_loglik,
    YeoJohnsonStage,
};

use crate::error::{Error, Result};
use crate::stage::{Chain, Stage};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianizeConfig {
    /// Identity blend of the covariance.
    pub eta: f64,
    /// ICA damping.
    pub alpha: f64,
    /// Maximum ICA fixed-point iterations.
    pub max_outer: usize,
    /// Maximum decorrelation / whitening / IGMM iterations.
    pub max_inner: usize,
    pub tol: f64,
    pub whitening: Whitening,
    pub ica: bool,
    pub yeo_johnson: bool,
    pub lambert: bool,
    /// Output standard deviation.
    pub temperature: f64,
    /// Adds a second pass over patches shifted by half a patch.
    pub roll: bool,
}

impl Default for GaussianizeConfig {
    fn default() -> Self {
        Self {
            eta: 1e-4,
            alpha: 0.8,
            max_outer: 10,
            max_inner: 100,
            tol: 1e-5,
            whitening: Whitening::Zca,
            ica: true,
            yeo_johnson: true,
            lambert: true,
            temperature: 1.0,
            roll: false,
        }
    }
}

impl GaussianizeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta must lie in (0,1), got {}", self.eta));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return bad("iteration limits must be positive".into());
        }
        if !(self.tol > 0.0) {
            return bad(format!("tolerance must be positive, got {}", self.tol));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        Ok(())
    }

    pub fn ica_params(&self) -> IcaParams {
        IcaParams {
            alpha: self.alpha,
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            tol: self.tol,
        }
    }

    pub fn lambert_params(&self) -> LambertParams {
        LambertParams {
            tol: self.tol,
            max_iter: self.max_inner,
        }
    }
}

fn pass(part: &PatchPartition, cfg: &GaussianizeConfig) -> Result<Vec<Box<dyn Stage>>> {
    let mut s: Vec<Box<dyn Stage>> = vec![
        Box::new(PartitionStage(part.clone())),
        Box::new(WhitenStage {
            mode: cfg.whitening,
            eta: cfg.eta,
            tol: cfg.tol,
            max_iter: cfg.max_inner,
        }),
    ];
    if cfg.ica {
        s.push(Box::new(IcaStage(cfg.ica_params())));
    }
    if cfg.yeo_johnson {
        s.push(Box::new(YeoJohnsonStage));
    }
    if cfg.lambert {
        s.push(Box::new(LambertStage(cfg.lambert_params())));
    }
    s.push(Box::new(StandardizeStage::new(cfg.temperature)?));
    s.push(Box::new(AssembleStage(part.clone())));
    Ok(s)
}

/// The full layer stack as a single differentiable stage.
pub fn pipeline(part: &PatchPartition, cfg: &GaussianizeConfig) -> Result<Chain> {
    cfg.validate()?;
    let mut stages = pass(part, cfg)?;
    if cfg.roll {
        stages.extend(pass(&part.half_rolled()?, cfg)?);
    }
    Ok(Chain::new("pipeline", stages))
}

pub fn gaussianize(v: &Tensor, part: &PatchPartition, cfg: &GaussianizeConfig) -> Result<Tensor> {
    pipeline(part, cfg)?.apply(v)
}
