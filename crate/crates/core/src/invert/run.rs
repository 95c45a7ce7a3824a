//! Multi-start inversion runs and their reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussianize::{diagnostics, PatchPartition};
use crate::optimize::{lbfgs, Termination};
use crate::tensor::Tensor;

use super::config::InversionConfig;
use super::metrics::{psnr, ssim, IMAGE_PEAK};
use super::problem::{Objective, ProblemData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartReport {
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    /// `½‖d − f(m)‖²` at the final iterate.
    pub final_loss: Option<f64>,
    /// `‖d − f(m)‖²` at the final iterate.
    pub misfit: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Option<Termination>,
    /// Scalar diagnostics of the final latent `z`.
    pub diagnostics: Option<serde_json::Map<String, serde_json::Value>>,
    pub diagnostics_pass: Option<bool>,
    pub loss_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
}

/// Best value of each metric over successful restarts, selected independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestMetrics {
    pub psnr: f64,
    pub psnr_seed: u64,
    pub ssim: f64,
    pub ssim_seed: u64,
    pub loss: f64,
    pub loss_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionReport {
    pub config: BTreeMap<String, String>,
    pub restarts: Vec<RestartReport>,
    pub best: BestMetrics,
    pub noise_energy: Option<f64>,
    pub data_energy: f64,
    pub wall_time_s: f64,
}

/// Top-level keys of a serialized [`InversionReport`].
pub const REPORT_KEYS: [&str; 6] = ["config", "restarts", "best", "noise_energy", "data_energy", "wall_time_s"];

impl InversionReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    /// `seed,iteration,loss,grad_norm` rows for every restart.
    pub fn write_history_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(e.to_string());
        writeln!(w, "seed,iteration,loss,grad_norm").map_err(io)?;
        for r in &self.restarts {
            for (k, (l, g)) in r.loss_history.iter().zip(&r.grad_norm_history).enumerate() {
                writeln!(w, "{},{k},{l:e},{g:e}", r.seed).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    pub fn save_history_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.write_history_csv(std::io::BufWriter::new(f))
    }
}

/// Report plus the final latent and image of every successful restart.
pub struct InversionOutcome {
    pub report: InversionReport,
    pub latents: Vec<Option<Tensor>>,
    pub images: Vec<Option<Tensor>>,
}

impl InversionOutcome {
    /// Image of the restart with the lowest final loss.
    pub fn best_image(&self) -> Option<&Tensor> {
        let seed = self.report.best.loss_seed;
        let k = self.report.restarts.iter().position(|r| r.seed == seed)?;
        self.images[k].as_ref()
    }
}

struct Finished {
    report: RestartReport,
    latent: Tensor,
    image: Tensor,
}

fn restart(problem: &ProblemData, cfg: &InversionConfig, part: &PatchPartition, seed: u64) -> Result<Finished> {
    let (obj, x0) = Objective::new(problem, cfg, seed)?;
    let min = lbfgs(|x| obj.value_and_grad(x), &x0, &cfg.optimizer)?;
    let latent = obj.latent(&min.x)?;
    let image = obj.image(&min.x)?;
    let diag = diagnostics(&latent, part)?;
    let report = RestartReport {
        seed,
        ok: true,
        error: None,
        final_loss: Some(min.loss),
        misfit: Some(2.0 * min.loss),
        psnr: Some(psnr(&problem.truth, &image, IMAGE_PEAK)?),
        ssim: Some(ssim(&problem.truth, &image)?),
        iterations: min.iterations,
        evaluations: min.trace.evaluations,
        termination: Some(min.termination),
        diagnostics_pass: Some(diag.passes(cfg.gaussianize.temperature)),
        diagnostics: Some(diag.to_flat_json()),
        loss_history: min.trace.losses,
        grad_norm_history: min.trace.grad_norms,
    };
    Ok(Finished { report, latent, image })
}

fn failed(seed: u64, e: &Error) -> RestartReport {
    RestartReport {
        seed,
        ok: false,
        error: Some(e.to_string()),
        final_loss: None,
        misfit: None,
        psnr: None,
        ssim: None,
        iterations: 0,
        evaluations: 0,
        termination: None,
        diagnostics: None,
        diagnostics_pass: None,
        loss_history: Vec::new(),
        grad_norm_history: Vec::new(),
    }
}

fn select_best(restarts: &[RestartReport]) -> Option<BestMetrics> {
    let ok: Vec<&RestartReport> = restarts.iter().filter(|r| r.ok).collect();
    let pick = |key: &dyn Fn(&RestartReport) -> f64, larger: bool| -> (f64, u64) {
        ok.iter()
            .map(|r| (key(r), r.seed))
            .reduce(|a, b| if (b.0 > a.0) == larger && b.0 != a.0 { b } else { a })
            .expect("at least one successful restart")
    };
    if ok.is_empty() {
        return None;
    }
    let (psnr, psnr_seed) = pick(&|r| r.psnr.unwrap_or(f64::NEG_INFINITY), true);
    let (ssim, ssim_seed) = pick(&|r| r.ssim.unwrap_or(f64::NEG_INFINITY), true);
    let (loss, loss_seed) = pick(&|r| r.final_loss.unwrap_or(f64::INFINITY), false);
    Some(BestMetrics {
        psnr,
        psnr_seed,
        ssim,
        ssim_seed,
        loss,
        loss_seed,
    })
}

/// Runs one inversion per seed concurrently and merges the results in seed
/// order. Failed restarts are recorded; the run fails only when every
/// restart does, with the first restart's error.
pub fn run_inversion(cfg: &InversionConfig) -> Result<InversionOutcome> {
    let start = Instant::now();
    cfg.validate()?;
    let problem = ProblemData::build(cfg)?;
    let part = PatchPartition::new(&cfg.latent, &cfg.patch)?;
    let results: Vec<Result<Finished>> = cfg
        .seeds
        .par_iter()
        .map(|&s| restart(&problem, cfg, &part, s))
        .collect();
    let mut restarts = Vec::with_capacity(results.len());
    let mut latents = Vec::with_capacity(results.len());
    let mut images = Vec::with_capacity(results.len());
    let mut first_err = None;
    for (&seed, r) in cfg.seeds.iter().zip(results) {
        match r {
            Ok(f) => {
                restarts.push(f.report);
                latents.push(Some(f.latent));
                images.push(Some(f.image));
            }
            Err(e) => {
                log::warn!("restart with seed {seed} failed: {e}");
                restarts.push(failed(seed, &e));
                latents.push(None);
                images.push(None);
                first_err.get_or_insert(e);
            }
        }
    }
    let Some(best) = select_best(&restarts) else {
        return Err(first_err.expect("no restart succeeded"));
    };
    let report = InversionReport {
        config: cfg.entries(),
        restarts,
        best,
        noise_energy: problem.noise_energy,
        data_energy: problem.data.dot(&problem.data),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(InversionOutcome {
        report,
        latents,
        images,
    })
}
