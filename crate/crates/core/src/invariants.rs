//! Cross-module property tests.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gaussianize::{
    diagnostics, gaussianize, standardize, yeo_johnson, GaussianizeConfig, PatchPartition, StandardizeStage,
    WhitenStage, Whitening, YeoJohnsonStage,
};
use crate::gradcheck::stage_dot_test;
use crate::models::blur::gaussian_taps;
use crate::models::{blur, blur_adjoint, make_mask, CsMriStage, ToyGenerator};
use crate::optimize::{lbfgs, LbfgsConfig};
use crate::reparam::{cayley, skew_param_count, spherical, CayleyStage, SphericalStage};
use crate::stage::Stage;
use crate::tensor::Tensor;

fn randn(dims: &[usize], seed: u64) -> Tensor {
    Tensor::randn(dims, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Tensor dims, a dividing patch and an arbitrary roll.
fn layout() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, Vec<usize>)> {
    prop::collection::vec((1usize..4, 1usize..4, 0usize..9), 1..4).prop_map(|axes| {
        let dims = axes.iter().map(|a| a.0 * a.1).collect();
        let patch = axes.iter().map(|a| a.1).collect();
        let roll = axes.iter().map(|a| a.2).collect();
        (dims, patch, roll)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partition_round_trip((dims, patch, roll) in layout(), seed in any::<u64>()) {
        let z = randn(&dims, seed);
        let p = PatchPartition::with_roll(&dims, &patch, &roll).unwrap();
        let v = p.partition(&z).unwrap();
        prop_assert_eq!(v.dims(), &[p.patch_dim(), p.num_patches()]);
        prop_assert_eq!(p.assemble(&v).unwrap(), z.clone());
        // a permutation: partition is its own adjoint's inverse
        let w = randn(v.dims(), seed ^ 1);
        prop_assert!(rel(v.dot(&w), z.dot(&p.assemble(&w).unwrap())) <= 1e-12);
    }

    #[test]
    fn cayley_is_orthogonal(dim in 2usize..12, seed in any::<u64>(), scale in 0.01f64..5.0) {
        let params = randn(&[skew_param_count(dim)], seed).scale(scale);
        let r = cayley(dim, params.data()).unwrap();
        let err = r.transpose().unwrap().matmul(&r).unwrap().axpy(-1.0, &Tensor::identity(dim)).unwrap().max_abs();
        prop_assert!(err <= 1e-12, "{}", err);
    }

    #[test]
    fn spherical_norm_is_exact(n in 2usize..400, gamma in 0.1f64..3.0, seed in any::<u64>()) {
        let z = spherical(&randn(&[n], seed), gamma).unwrap();
        prop_assert!(rel(z.norm(), gamma * (n as f64).sqrt()) <= 1e-14);
    }

    #[test]
    fn standardize_moments(n in 8usize..300, gamma in 0.2f64..2.0, seed in any::<u64>()) {
        let x = randn(&[n], seed).map(|v| 3.0 + v * v * v);
        let y = standardize(&x, gamma).unwrap();
        let sd = (y.dot(&y) / (n - 1) as f64).sqrt();
        prop_assert!(y.mean().abs() <= 1e-12);
        prop_assert!((sd - gamma).abs() <= 1e-12);
    }

    #[test]
    fn yeo_johnson_monotone_and_identity(a in -20.0f64..20.0, b in -20.0f64..20.0, lambda in -3.0f64..3.0) {
        prop_assert!((yeo_johnson(a, 1.0) - a).abs() <= 1e-13 * a.abs().max(1.0));
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(yeo_johnson(lo, lambda) <= yeo_johnson(hi, lambda));
    }

    #[test]
    fn blur_adjoint_dot(sigma in 0.5f64..4.0, h in 4usize..20, w in 4usize..20, seed in any::<u64>()) {
        let taps = gaussian_taps(sigma).unwrap();
        let x = randn(&[h, w], seed);
        let y = randn(&[h, w], seed ^ 7);
        let lhs = blur(&x, &taps).unwrap().dot(&y);
        let rhs = x.dot(&blur_adjoint(&y, &taps).unwrap());
        // scaled by ‖x‖‖y‖: wide kernels on small grids make both sides tiny
        prop_assert!((lhs - rhs).abs() <= 1e-14 * x.norm() * y.norm());
    }

    #[test]
    fn csmri_adjoint_dot(logh in 3u32..6, logw in 3u32..6, accl in 1.0f64..4.0, seed in any::<u64>()) {
        let (h, w) = (1usize << logh, 1usize << logw);
        let mask = make_mask(&[h, w], accl, 2, seed).unwrap();
        let kept = mask.data().iter().filter(|&&m| m != 0.0).count() / w;
        prop_assert_eq!(kept, ((h as f64) / accl).round() as usize);
        let op = CsMriStage::new(mask).unwrap();
        let x = randn(&[h, w], seed);
        let y = randn(&[h, w, 2], seed ^ 3);
        let lhs = op.forward_op(&x).unwrap().dot(&y);
        let rhs = x.dot(&op.adjoint_op(&y).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-14 * x.norm() * y.norm());
    }

    #[test]
    fn gaussianize_is_deterministic(seed in any::<u64>(), roll in any::<bool>()) {
        let part = PatchPartition::new(&[16, 16], &[2, 2]).unwrap();
        let cfg = GaussianizeConfig { roll, ..Default::default() };
        let v = randn(&[16, 16], seed).map(|x| x + 0.3 * x * x);
        let a = gaussianize(&v, &part, &cfg).unwrap();
        let b = gaussianize(&v, &part, &cfg).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let d = diagnostics(&a, &part).unwrap();
        prop_assert!(d.norm_in_band(cfg.temperature));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn smooth_stage_dot_tests(seed in 0u64..1000) {
        let mat = randn(&[3, 40], seed).map(|v| v + 0.2 * v * v);
        let stages: Vec<(Box<dyn Stage>, Tensor)> = vec![
            (Box::new(WhitenStage { mode: Whitening::Zca, eta: 1e-4, tol: 1e-5, max_iter: 100 }), mat.clone()),
            (Box::new(YeoJohnsonStage), mat.clone()),
            (Box::new(StandardizeStage::new(0.7).unwrap()), mat.clone()),
            (Box::new(SphericalStage { gamma: 1.0 }), mat.clone()),
            (Box::new(CayleyStage { dim: 4 }), randn(&[skew_param_count(4)], seed)),
            (Box::new(ToyGenerator::default()), randn(&[6, 6], seed)),
        ];
        for (s, x) in &stages {
            let e = stage_dot_test(s.as_ref(), x, seed, 1e-3).unwrap();
            prop_assert!(e <= 1e-8, "{}: {:e}", s.name(), e);
        }
    }

    #[test]
    fn lbfgs_losses_never_increase(seed in any::<u64>(), n in 2usize..12) {
        let scales = randn(&[n], seed).map(|v| 0.5 + v.abs());
        let f = |x: &Tensor| -> crate::Result<(f64, Tensor)> {
            let g = x.zip_map(&scales, |a, s| s * a * (1.0 + a * a))?;
            let v = x.data().iter().zip(scales.data()).map(|(a, s)| s * (0.5 * a * a + 0.25 * a.powi(4))).sum();
            Ok((v, g))
        };
        let m = lbfgs(f, &randn(&[n], seed ^ 9), &LbfgsConfig::default()).unwrap();
        prop_assert!(m.trace.losses.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(m.grad.norm() <= 1e-6);
    }
}
