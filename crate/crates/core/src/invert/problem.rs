//! Synthetic inverse problems and the data-misfit objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussianize::PatchPartition;
use crate::models::generator::UPSAMPLE;
use crate::models::{
    add_noise_8bit, add_noise_snr, make_mask, traveltime_noise, BlurStage, CsMriStage, EikonalGeometry,
    EikonalStage, ToyGenerator, VelocityStage,
};
use crate::reparam::{glayer_reparam, OrthogonalReparam, SphericalStage};
use crate::stage::{Chain, Pullback, Stage};
use crate::tensor::Tensor;

use super::config::{InversionConfig, ProblemKind, ReparamKind, TruthKind};

/// Piecewise-constant test image: a bright rectangle, a dark disk and a
/// thin bar on a mid-gray background.
pub fn blocks_image(h: usize, w: usize) -> Tensor {
    let mut m = Tensor::filled(&[h, w], -0.3);
    let (hf, wf) = (h as f64, w as f64);
    for i in 0..h {
        for j in 0..w {
            let (y, x) = (i as f64 / hf, j as f64 / wf);
            let v = if (0.12..0.45).contains(&y) && (0.1..0.5).contains(&x) {
                0.7
            } else if (y - 0.66).powi(2) + (x - 0.62).powi(2) < 0.2f64.powi(2) {
                -0.85
            } else if (0.2..0.8).contains(&y) && (0.8..0.88).contains(&x) {
                0.3
            } else {
                continue;
            };
            m.set2(i, j, v);
        }
    }
    m
}

/// Ground truth, observed data and forward-model parameters of one run.
pub struct ProblemData {
    pub kind: ProblemKind,
    pub image_dims: [usize; 2],
    pub truth: Tensor,
    pub data: Tensor,
    /// Noise-free data, when simulated.
    pub clean: Option<Tensor>,
    /// `‖d − f(m*)‖²`, when simulated.
    pub noise_energy: Option<f64>,
    mask: Option<Tensor>,
    geometry: Option<EikonalGeometry>,
    inversion_sigma: f64,
}

impl ProblemData {
    pub fn build(cfg: &InversionConfig) -> Result<Self> {
        let image_dims = [cfg.latent[0] * UPSAMPLE, cfg.latent[1] * UPSAMPLE];
        let truth = match (&cfg.truth_path, cfg.truth) {
            (Some(p), _) => Tensor::load(p)?,
            (None, TruthKind::Toy) => {
                let z = Tensor::randn(&cfg.latent, &mut ChaCha8Rng::seed_from_u64(cfg.truth_seed));
                ToyGenerator::default().apply(&z)?
            }
            (None, TruthKind::Blocks) => blocks_image(image_dims[0], image_dims[1]),
        };
        if truth.dims() != image_dims {
            return Err(Error::shape(format!(
                "ground truth {:?} does not match generator output {image_dims:?}",
                truth.dims()
            )));
        }
        let mut p = Self {
            kind: cfg.problem,
            image_dims,
            truth,
            data: Tensor::scalar(0.0),
            clean: None,
            noise_energy: None,
            mask: None,
            geometry: None,
            inversion_sigma: cfg.inversion_sigma(),
        };
        match cfg.problem {
            ProblemKind::Csmri => {
                p.mask = Some(make_mask(&image_dims, cfg.accl, cfg.center_lines, cfg.mask_seed)?);
            }
            ProblemKind::Eikonal => {
                p.geometry = Some(EikonalGeometry::new(
                    image_dims[0],
                    image_dims[1],
                    cfg.spacing,
                    cfg.sources_per_side,
                )?);
            }
            ProblemKind::Deblur => {}
        }
        if let Some(path) = &cfg.data_path {
            p.data = Tensor::load(path)?;
            return Ok(p);
        }
        let sim = match cfg.problem {
            ProblemKind::Deblur => Chain::new("simulate", vec![Box::new(BlurStage::new(cfg.blur_sigma)?)]),
            _ => p.forward_model()?,
        };
        let clean = sim.apply(&p.truth)?;
        let noisy = match cfg.problem {
            ProblemKind::Deblur => add_noise_8bit(&clean, cfg.noise_std_8bit, cfg.noise_seed)?,
            ProblemKind::Csmri => {
                let support: Vec<bool> = p
                    .mask
                    .as_ref()
                    .expect("mask built above")
                    .data()
                    .iter()
                    .flat_map(|&k| [k != 0.0, k != 0.0])
                    .collect();
                add_noise_snr(&clean, cfg.snr_db, cfg.noise_seed, Some(&support))?
            }
            ProblemKind::Eikonal => traveltime_noise(&clean, cfg.traveltime_std, cfg.noise_seed)?,
        };
        let e = noisy.axpy(-1.0, &clean)?;
        p.noise_energy = Some(e.dot(&e));
        p.data = noisy;
        p.clean = Some(clean);
        Ok(p)
    }

    /// Image-to-data operator used during inversion.
    pub fn forward_model(&self) -> Result<Chain> {
        let stages: Vec<Box<dyn Stage>> = match self.kind {
            ProblemKind::Deblur => vec![Box::new(BlurStage::new(self.inversion_sigma)?)],
            ProblemKind::Csmri => vec![Box::new(CsMriStage::new(
                self.mask.clone().expect("csmri problems carry a mask"),
            )?)],
            ProblemKind::Eikonal => vec![
                Box::new(VelocityStage),
                Box::new(EikonalStage::new(
                    self.geometry.clone().expect("eikonal problems carry a geometry"),
                )),
            ],
        };
        Ok(Chain::new(self.kind.to_string(), stages))
    }

    pub fn mask(&self) -> Option<&Tensor> {
        self.mask.as_ref()
    }

    pub fn geometry(&self) -> Option<&EikonalGeometry> {
        self.geometry.as_ref()
    }
}

struct IdentityStage;

impl Stage for IdentityStage {
    fn name(&self) -> &str {
        "identity"
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Pullback)> {
        Ok((x.clone(), Pullback::identity()))
    }
}

/// `½‖d − f(g(h(x)))‖²` for one restart. The optimization variable `x`
/// is the reparameterized latent (the skew parameters for `orthogonal`);
/// the latent `z = h(x)` is recomputed on every evaluation.
pub struct Objective {
    reparam: Box<dyn Stage>,
    generator: ToyGenerator,
    model: Chain,
    data: Tensor,
}

impl Objective {
    /// Builds the objective and the seeded starting point.
    pub fn new(problem: &ProblemData, cfg: &InversionConfig, seed: u64) -> Result<(Self, Tensor)> {
        let part = PatchPartition::new(&cfg.latent, &cfg.patch)?;
        let v0 = Tensor::randn(&cfg.latent, &mut ChaCha8Rng::seed_from_u64(seed));
        let (reparam, x0): (Box<dyn Stage>, Tensor) = match cfg.reparam {
            ReparamKind::None => (Box::new(IdentityStage), v0),
            ReparamKind::Spherical => (
                Box::new(SphericalStage {
                    gamma: cfg.gaussianize.temperature,
                }),
                v0,
            ),
            ReparamKind::Orthogonal => {
                let r = OrthogonalReparam::new(part, &v0)?;
                if r.param_count() == 0 {
                    return Err(Error::Config("orthogonal reparameterization needs patches of size >= 2".into()));
                }
                let x0 = Tensor::zeros(&[r.param_count()]);
                (Box::new(r), x0)
            }
            ReparamKind::Glayers => (Box::new(glayer_reparam(&part, &cfg.gaussianize)?), v0),
        };
        let obj = Self {
            reparam,
            generator: ToyGenerator::default(),
            model: problem.forward_model()?,
            data: problem.data.clone(),
        };
        Ok((obj, x0))
    }

    pub fn value_and_grad(&self, x: &Tensor) -> Result<(f64, Tensor)> {
        let (z, pb_z) = self.reparam.forward(x)?;
        let (m, pb_m) = self.generator.forward(&z)?;
        let (pred, pb_d) = self.model.forward(&m)?;
        let r = pred.axpy(-1.0, &self.data)?;
        let g = pb_z.apply(&pb_m.apply(&pb_d.apply(&r)?)?)?;
        Ok((0.5 * r.dot(&r), g))
    }

    pub fn value(&self, x: &Tensor) -> Result<f64> {
        let m = self.image(x)?;
        let r = self.model.apply(&m)?.axpy(-1.0, &self.data)?;
        Ok(0.5 * r.dot(&r))
    }

    pub fn latent(&self, x: &Tensor) -> Result<Tensor> {
        self.reparam.apply(x)
    }

    pub fn image(&self, x: &Tensor) -> Result<Tensor> {
        self.generator.apply(&self.latent(x)?)
    }
}
