//! Named gradient checks for every stage and objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussianize::{
    pipeline, zca_whiten, GaussianizeConfig, IcaStage, LambertStage, PatchPartition, StandardizeStage,
    WhitenStage, Whitening, YeoJohnsonStage,
};
use crate::gradcheck::{fd_convergence_test, stage_fd_test, FdOutcome, FdReport, FD_STEPS};
use crate::models::eikonal::{solve_all, traveltime_adjoint, receiver_table, EikonalGeometry};
use crate::models::{velocity_map, ToyGenerator};
use crate::reparam::{skew_param_count, CayleyStage, SphericalStage};
use crate::stage::Stage;
use crate::tensor::Tensor;

use super::config::{InversionConfig, ProblemKind, ReparamKind};
use super::problem::{Objective, ProblemData};

pub const GRADCHECK_IDS: [&str; 13] = [
    "zca",
    "iterwhite",
    "ica",
    "yj",
    "lambert",
    "standardize",
    "spherical",
    "cayley",
    "generator",
    "pipeline",
    "deblur",
    "csmri",
    "eikonal",
];

/// Slope window accepted as second-order convergence.
pub const SLOPE_RANGE: (f64, f64) = (1.8, 2.2);
/// Largest accepted adjoint-vs-central-difference relative error.
pub const ADJOINT_TOL: f64 = 1e-4;
const ADJOINT_CELLS: usize = 5;
const DIRECTION_SALT: u64 = 0x5851_f42d_4c95_7f2d;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckResult {
    pub id: String,
    pub seed: u64,
    /// Taylor-remainder table; empty for adjoint checks.
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: Option<f64>,
    pub exact_to_roundoff: bool,
    /// Per-cell relative errors of the adjoint check.
    pub adjoint_errors: Vec<f64>,
    pub passed: bool,
}

impl GradcheckResult {
    fn from_fd(id: &str, seed: u64, r: FdReport) -> Self {
        Self {
            id: id.into(),
            seed,
            steps: FD_STEPS.to_vec(),
            errors: r.errors.clone(),
            slope: r.slope(),
            exact_to_roundoff: r.outcome == FdOutcome::ExactToRoundoff,
            adjoint_errors: Vec::new(),
            passed: r.passes(SLOPE_RANGE.0, SLOPE_RANGE.1),
        }
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        let mut s = format!("gradcheck {} (seed {})\n", self.id, self.seed);
        if self.adjoint_errors.is_empty() {
            s.push_str("      eps        error\n");
            for (e, r) in self.steps.iter().zip(&self.errors) {
                s.push_str(&format!("{e:>9.0e}  {r:>11.4e}\n"));
            }
            match self.slope {
                Some(p) => s.push_str(&format!("slope {p:.4}\n")),
                None => s.push_str("slope n/a (remainders at roundoff: exact)\n"),
            }
        } else {
            for (k, e) in self.adjoint_errors.iter().enumerate() {
                s.push_str(&format!("cell {k}: adjoint vs central difference rel. error {e:.3e}\n"));
            }
        }
        s.push_str(if self.passed { "PASS\n" } else { "FAIL\n" });
        s
    }
}

/// `x + 0.3x²` of standard normal draws: skewed, full rank.
fn skewed(dims: &[usize], seed: u64) -> Tensor {
    Tensor::randn(dims, &mut ChaCha8Rng::seed_from_u64(seed)).map(|v| v + 0.3 * v * v)
}

fn heavy(dims: &[usize], delta: f64, seed: u64) -> Tensor {
    Tensor::randn(dims, &mut ChaCha8Rng::seed_from_u64(seed)).map(|v| v * (0.5 * delta * v * v).exp())
}

fn stage_check(id: &str, seed: u64, stage: &dyn Stage, x: &Tensor) -> Result<GradcheckResult> {
    Ok(GradcheckResult::from_fd(id, seed, stage_fd_test(stage, x, seed)?))
}

fn objective_check(id: &str, kind: ProblemKind, seed: u64) -> Result<GradcheckResult> {
    let cfg = InversionConfig {
        problem: kind,
        reparam: ReparamKind::Glayers,
        truth_seed: seed.wrapping_add(1000),
        ..Default::default()
    };
    let problem = ProblemData::build(&cfg)?;
    let (obj, x0) = Objective::new(&problem, &cfg, seed)?;
    let (_, g) = obj.value_and_grad(&x0)?;
    // x0 is drawn from `seed`; a direction from the same stream would be
    // parallel to x0, along which the glayers objective is nearly flat
    let r = fd_convergence_test(|x| obj.value(x), &g, &x0, seed ^ DIRECTION_SALT)?;
    Ok(GradcheckResult::from_fd(id, seed, r))
}

/// Adjoint gradient of the traveltime misfit against central differences on
/// randomly chosen cells of a smooth heterogeneous velocity.
fn eikonal_check(seed: u64) -> Result<GradcheckResult> {
    let geom = EikonalGeometry::desk();
    let [h, w] = geom.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Tensor::randn(&[h / 4, w / 4], &mut rng);
    let c = velocity_map(&ToyGenerator::default().apply(&z)?);
    let obs = receiver_table(&solve_all(&Tensor::filled(&[h, w], 1550.0), &geom)?, &geom)?;
    let misfit = |c: &Tensor| -> Result<(f64, Tensor, Vec<Tensor>)> {
        let fields = solve_all(c, &geom)?;
        let r = receiver_table(&fields, &geom)?.axpy(-1.0, &obs)?;
        Ok((0.5 * r.dot(&r), r, fields))
    };
    let (_, r, fields) = misfit(&c)?;
    let g = traveltime_adjoint(&c, &fields, &r, &geom)?;
    let step = 1e-3;
    let mut errs = Vec::with_capacity(ADJOINT_CELLS);
    for _ in 0..ADJOINT_CELLS {
        let k = rng.random_range(0..h * w);
        let mut cp = c.clone();
        cp.data_mut()[k] += step;
        let mut cm = c.clone();
        cm.data_mut()[k] -= step;
        let fd = (misfit(&cp)?.0 - misfit(&cm)?.0) / (2.0 * step);
        let scale = fd.abs().max(g.data()[k].abs());
        errs.push(if scale == 0.0 { 0.0 } else { (fd - g.data()[k]).abs() / scale });
    }
    Ok(GradcheckResult {
        id: "eikonal".into(),
        seed,
        steps: Vec::new(),
        errors: Vec::new(),
        slope: None,
        exact_to_roundoff: false,
        passed: errs.iter().all(|&e| e <= ADJOINT_TOL),
        adjoint_errors: errs,
    })
}

/// Runs the named check; unknown ids are a lookup error.
pub fn gradcheck(id: &str, seed: u64) -> Result<GradcheckResult> {
    let mat = [4, 64];
    let whiten = |mode| WhitenStage {
        mode,
        eta: 1e-4,
        tol: 1e-5,
        max_iter: 100,
    };
    let cfg = GaussianizeConfig::default();
    match id {
        "zca" => stage_check(id, seed, &whiten(Whitening::Zca), &skewed(&mat, seed)),
        "iterwhite" => stage_check(id, seed, &whiten(Whitening::Iterative), &skewed(&mat, seed)),
        "ica" => {
            let v = zca_whiten(&skewed(&mat, seed), cfg.eta)?;
            stage_check(id, seed, &IcaStage(cfg.ica_params()), &v)
        }
        "yj" => stage_check(id, seed, &YeoJohnsonStage, &skewed(&mat, seed)),
        "lambert" => stage_check(id, seed, &LambertStage(cfg.lambert_params()), &heavy(&mat, 0.3, seed)),
        "standardize" => stage_check(id, seed, &StandardizeStage::new(0.8)?, &skewed(&mat, seed)),
        "spherical" => stage_check(id, seed, &SphericalStage { gamma: 1.0 }, &skewed(&[64], seed)),
        "cayley" => {
            let dim = 4;
            let p = Tensor::randn(&[skew_param_count(dim)], &mut ChaCha8Rng::seed_from_u64(seed));
            stage_check(id, seed, &CayleyStage { dim }, &p)
        }
        "generator" => stage_check(
            id,
            seed,
            &ToyGenerator::default(),
            &Tensor::randn(&[16, 16], &mut ChaCha8Rng::seed_from_u64(seed)),
        ),
        "pipeline" => {
            let part = PatchPartition::new(&[16, 16], &[2, 2])?;
            stage_check(id, seed, &pipeline(&part, &cfg)?, &skewed(&[16, 16], seed))
        }
        "deblur" => objective_check(id, ProblemKind::Deblur, seed),
        "csmri" => objective_check(id, ProblemKind::Csmri, seed),
        "eikonal" => eikonal_check(seed),
        other => Err(Error::Lookup(format!(
            "unknown gradcheck id '{other}'; expected one of {}",
            GRADCHECK_IDS.join(", ")
        ))),
    }
}
