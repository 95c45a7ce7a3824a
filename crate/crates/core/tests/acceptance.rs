//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach stdout.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use glayers_core::gaussianize::{
    diagnostics, gaussianize, ica_layer, kurtosis, lambert_layer, zca_whiten, GaussianizeConfig, IcaParams,
    LambertParams, PatchPartition,
};
use glayers_core::invert::{gradcheck, run_inversion, InversionConfig, ProblemKind, ReparamKind, GRADCHECK_IDS};
use glayers_core::models::{blur, blur_adjoint, eikonal_solve, make_mask, CsMriStage};
use glayers_core::models::blur::gaussian_taps;
use glayers_core::reparam::{cayley, skew_param_count, spherical};
use glayers_core::{Result, Stage, Tensor};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(name: &str, budget: Option<Duration>, f: impl FnOnce() -> Result<Outcome>) -> bool {
    let t = Instant::now();
    let (mut pass, mut detail) = match f() {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let el = t.elapsed();
    if let Some(b) = budget {
        if el > b {
            pass = false;
            detail.push_str(&format!("; over budget {b:?}"));
        }
    }
    println!("{} {name}: {detail} [{:.1}s]", if pass { "PASS" } else { "FAIL" }, el.as_secs_f64());
    pass
}

fn gradient_fidelity() -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut pass = true;
    for id in GRADCHECK_IDS {
        let r = gradcheck(id, 0)?;
        pass &= r.passed;
        let what = match (r.slope, r.adjoint_errors.is_empty()) {
            (Some(s), _) => format!("{s:.3}"),
            (None, true) => "exact".into(),
            (None, false) => format!("max rel {:.1e}", r.adjoint_errors.iter().cloned().fold(0.0, f64::max)),
        };
        parts.push(format!("{id} {what}{}", if r.passed { "" } else { " (!)" }));
    }
    Ok(Outcome {
        pass,
        detail: parts.join(", "),
    })
}

const EFFICACY_DIMS: [usize; 3] = [3, 64, 64];
const EFFICACY_PATCH: [usize; 3] = [1, 4, 4];
const TRIALS: u64 = 20;
const MIN_PASSING: usize = 19;

fn efficacy() -> Result<Outcome> {
    let part = PatchPartition::new(&EFFICACY_DIMS, &EFFICACY_PATCH)?;
    let cfg = GaussianizeConfig::default();
    let gamma = cfg.temperature;
    // gates validated on direct standard-Gaussian draws before use
    let mut oracle = 0;
    for s in 0..TRIALS {
        oracle += diagnostics(&common::gaussian(&EFFICACY_DIMS, 10_000 + s), &part)?.passes(gamma) as usize;
    }
    let scenarios: [(&str, fn(u64) -> Tensor); 3] = [
        ("log-gamma", |s| common::log_gamma(&EFFICACY_DIMS, s)),
        ("heavy-tail", |s| common::heavy_tailed(&EFFICACY_DIMS, 0.5, s)),
        ("planar", |s| common::planar_pattern(&EFFICACY_DIMS, s)),
    ];
    let mut pass = oracle >= MIN_PASSING;
    let mut detail = vec![format!("gaussian oracle {oracle}/{TRIALS}")];
    for (name, gen) in scenarios {
        let mut ok = 0;
        let mut before = 0;
        for s in 0..TRIALS {
            let v = gen(s);
            before += diagnostics(&v, &part)?.passes(gamma) as usize;
            ok += diagnostics(&gaussianize(&v, &part, &cfg)?, &part)?.passes(gamma) as usize;
        }
        pass &= ok >= MIN_PASSING;
        detail.push(format!("{name} {ok}/{TRIALS} (raw {before}/{TRIALS})"));
    }
    Ok(Outcome {
        pass,
        detail: detail.join(", "),
    })
}

fn igmm() -> Result<Outcome> {
    let n = 4096;
    let mut pass = true;
    let mut deltas = Vec::new();
    let mut kurts = Vec::new();
    for seed in 0..5 {
        let s = common::heavy_tailed(&[n], 0.3, seed);
        let (x, fit) = lambert_layer(&s, &LambertParams::default())?;
        let k = kurtosis(x.data());
        pass &= (0.2..=0.4).contains(&fit.delta) && (k - 3.0).abs() <= 0.5;
        deltas.push(format!("{:.3}", fit.delta));
        kurts.push(format!("{k:.3}"));
    }
    // oracle: the first seeded Gaussian draw whose kurtosis is at most 3
    let g = (0..)
        .map(|s| common::gaussian(&[n], 500 + s))
        .find(|g| kurtosis(g.data()) <= 3.0)
        .expect("Gaussian draws with kurtosis below 3 exist");
    let (y, fit) = lambert_layer(&g, &LambertParams::default())?;
    let unchanged = fit.skipped && y.data().iter().zip(g.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    pass &= unchanged;
    Ok(Outcome {
        pass,
        detail: format!(
            "delta [{}], kurtosis [{}], gaussian input unchanged {unchanged}",
            deltas.join(", "),
            kurts.join(", ")
        ),
    })
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn ica_recovery() -> Result<Outcome> {
    let n = 4096;
    let mut rng = common::rng(30);
    let half = 3f64.sqrt();
    let s = Tensor::new(vec![2, n], (0..2 * n).map(|_| rng.random_range(-half..half)).collect())?;
    let th = 30f64.to_radians();
    let r = Tensor::from_rows(&[vec![th.cos(), -th.sin()], vec![th.sin(), th.cos()]])?;
    let v = zca_whiten(&r.matmul(&s)?, GaussianizeConfig::default().eta)?;
    let (p, _) = ica_layer(&v, &IcaParams::default())?;
    let row = |t: &Tensor, i: usize| t.data()[i * n..(i + 1) * n].to_vec();
    let c = |i, j| corr(&row(&p, i), &row(&s, j)).abs();
    // exhaustive alignment over the two permutations; |corr| absorbs signs
    let recovered = (c(0, 0).min(c(1, 1))).max(c(0, 1).min(c(1, 0)));

    // exactly independent rows: the product grid of one symmetric sample
    let m = 96;
    let mut a: Vec<f64> = (0..m / 2).map(|_| common::normal(&mut rng)).collect();
    a.extend(a.clone().iter().map(|x| -x));
    let sd = (a.iter().map(|x| x * x).sum::<f64>() / (m - 1) as f64).sqrt();
    let a: Vec<f64> = a.iter().map(|x| x / sd).collect();
    let mut grid = vec![0.0; 2 * m * m];
    for i in 0..m {
        for j in 0..m {
            grid[i * m + j] = a[i];
            grid[m * m + i * m + j] = a[j];
        }
    }
    let (_, w) = ica_layer(&Tensor::new(vec![2, m * m], grid)?, &IcaParams::default())?;
    let drift = w.axpy(-1.0, &Tensor::identity(2))?.max_abs();
    Ok(Outcome {
        pass: recovered > 0.95 && drift <= 1e-6,
        detail: format!("min aligned |corr| {recovered:.4} (alpha {}), identity drift {drift:.1e}", IcaParams::default().alpha),
    })
}

fn eikonal_errors(n: usize) -> Result<(f64, f64)> {
    let h = 1.0 / n as f64;
    let src = (n / 2, n / 2);
    let t = eikonal_solve(&Tensor::filled(&[n, n], 1.0), h, src)?;
    let (mut rel, mut abs) = (0.0f64, 0.0f64);
    for i in 0..n {
        for j in 0..n {
            let (di, dj) = (i as f64 - src.0 as f64, j as f64 - src.1 as f64);
            let exact = h * (di * di + dj * dj).sqrt();
            if exact == 0.0 {
                continue;
            }
            let e = (t.get2(i, j) - exact).abs();
            rel = rel.max(e / exact);
            abs = abs.max(e);
        }
    }
    Ok((rel, abs))
}

fn eikonal() -> Result<Outcome> {
    let (rel128, abs128) = eikonal_errors(128)?;
    let (_, abs64) = eikonal_errors(64)?;
    let ratio = abs64 / abs128;
    Ok(Outcome {
        pass: rel128 <= 0.02 && (1.7..=2.3).contains(&ratio),
        detail: format!("128x128 max rel error {:.2}%, refinement ratio {ratio:.3}", 100.0 * rel128),
    })
}

const PAIRS: u64 = 10;
const MIN_PAIRS: usize = 8;
const MISFIT_FACTOR: f64 = 1.2;

fn end_to_end() -> Result<Outcome> {
    let mut joint = 0;
    let mut lines = Vec::new();
    for pair in 0..PAIRS {
        let mut c = InversionConfig {
            problem: ProblemKind::Csmri,
            snr_db: 10.0,
            truth_seed: 100 + pair,
            noise_seed: 200 + pair,
            seeds: vec![pair],
            patch: vec![1, 1],
            ..Default::default()
        };
        c.reparam = ReparamKind::Glayers;
        let g = run_inversion(&c)?.report;
        c.reparam = ReparamKind::None;
        let n = run_inversion(&c)?.report;
        let (rg, rn) = (&g.restarts[0], &n.restarts[0]);
        let ratio = rg.misfit.unwrap_or(f64::INFINITY) / g.noise_energy.expect("simulated data");
        let ok = rg.diagnostics_pass == Some(true) && rn.diagnostics_pass == Some(false) && ratio <= MISFIT_FACTOR;
        joint += ok as usize;
        if !ok {
            lines.push(format!(
                "pair {pair} misses (glayers gates {:?}, none gates {:?}, misfit {ratio:.3}x)",
                rg.diagnostics_pass, rn.diagnostics_pass
            ));
        }
    }
    let mut detail = format!("{joint}/{PAIRS} pairs meet all conditions");
    if !lines.is_empty() {
        detail.push_str("; ");
        detail.push_str(&lines.join("; "));
    }
    Ok(Outcome {
        pass: joint >= MIN_PAIRS,
        detail,
    })
}

fn rel_dot(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs())
}

fn structural() -> Result<Outcome> {
    let mut fails = Vec::new();
    let z = common::gaussian(&[3, 16, 24], 1);
    for (patch, roll) in [([1, 4, 4], [0, 0, 0]), ([3, 2, 8], [0, 1, 4]), ([1, 8, 6], [0, 4, 3])] {
        let p = PatchPartition::with_roll(z.dims(), &patch, &roll)?;
        if p.assemble(&p.partition(&z)?)? != z {
            fails.push(format!("round trip {patch:?}/{roll:?}"));
        }
    }
    let mut rng = common::rng(2);
    let mut orth = 0.0f64;
    for d in [2, 4, 9, 16] {
        let params: Vec<f64> = (0..skew_param_count(d)).map(|_| common::normal(&mut rng)).collect();
        let r = cayley(d, &params)?;
        orth = orth.max(r.transpose()?.matmul(&r)?.axpy(-1.0, &Tensor::identity(d))?.max_abs());
    }
    if orth > 1e-12 {
        fails.push(format!("cayley {orth:.1e}"));
    }
    let v = common::gaussian(&[1000], 3);
    let zs = spherical(&v, 0.7)?;
    let norm_err = (zs.norm() - 0.7 * 1000f64.sqrt()).abs() / zs.norm();
    if norm_err > 1e-14 {
        fails.push(format!("spherical {norm_err:.1e}"));
    }
    // linear operators: <A x, y> against <x, A^T y>
    let x = common::gaussian(&[32, 32], 4);
    let taps = gaussian_taps(3.0)?;
    let yb = common::gaussian(&[32, 32], 5);
    let mut dots = vec![rel_dot(blur(&x, &taps)?.dot(&yb), x.dot(&blur_adjoint(&yb, &taps)?))];
    let mri = CsMriStage::new(make_mask(&[32, 32], 4.0, 8, 0)?)?;
    let yk = common::gaussian(&[32, 32, 2], 6);
    dots.push(rel_dot(mri.forward_op(&x)?.dot(&yk), x.dot(&mri.adjoint_op(&yk)?)));
    let (_, pb) = mri.forward(&x)?;
    dots.push(rel_dot(mri.forward_op(&x)?.dot(&yk), x.dot(&pb.apply(&yk)?)));
    let p = PatchPartition::with_roll(z.dims(), &[1, 4, 4], &[0, 2, 2])?;
    let vb = common::gaussian(&[16, 72], 7);
    dots.push(rel_dot(p.partition(&z)?.dot(&vb), z.dot(&p.assemble(&vb)?)));
    let worst_dot = dots.iter().cloned().fold(0.0, f64::max);
    if worst_dot > 1e-8 {
        fails.push(format!("dot test {worst_dot:.1e}"));
    }
    let part = PatchPartition::new(&[3, 16, 16], &[1, 4, 4])?;
    let u = common::log_gamma(&[3, 16, 16], 8);
    let cfg = GaussianizeConfig {
        roll: true,
        ..Default::default()
    };
    let a = gaussianize(&u, &part, &cfg)?;
    let b = gaussianize(&u, &part, &cfg)?;
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut same = bits(&a) == bits(&b);
    let mut run = InversionConfig {
        problem: ProblemKind::Deblur,
        reparam: ReparamKind::Glayers,
        latent: [8, 8],
        ..Default::default()
    };
    run.optimizer.max_iter = 10;
    let mut r1 = run_inversion(&run)?.report;
    let mut r2 = run_inversion(&run)?.report;
    r1.wall_time_s = 0.0;
    r2.wall_time_s = 0.0;
    same &= r1.to_json()? == r2.to_json()?;
    if !same {
        fails.push("rerun not bit-identical".into());
    }
    Ok(Outcome {
        pass: fails.is_empty(),
        detail: format!(
            "cayley {orth:.1e}, spherical {norm_err:.1e}, worst dot {worst_dot:.1e}, reruns identical {same}{}",
            if fails.is_empty() { String::new() } else { format!("; failed: {}", fails.join(", ")) }
        ),
    })
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filter arguments are ignored; the suite is small
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let secs = Duration::from_secs;
    let results = [
        check("gradient fidelity", Some(secs(120)), gradient_fidelity),
        check("gaussianization efficacy", Some(secs(60)), efficacy),
        check("IGMM contract", None, igmm),
        check("ICA recovery", None, ica_recovery),
        check("eikonal solver", Some(secs(30)), eikonal),
        check("end-to-end csmri property", Some(secs(300)), end_to_end),
        check("structural invariants", None, structural),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
