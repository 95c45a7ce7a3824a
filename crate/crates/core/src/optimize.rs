//! Unconstrained minimization: L-BFGS with a strong-Wolfe line search, and Adam.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    /// Number of stored curvature pairs.
    pub memory: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_ls: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 300,
            grad_tol: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            max_ls: 25,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config(format!(
                "line search needs 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        if !(self.grad_tol >= 0.0) || self.max_ls == 0 {
            return Err(Error::Config("grad_tol must be >= 0 and max_ls > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradTol,
    MaxIter,
    LineSearchFailed,
}

/// Quantities of one accepted line-search step along `φ(α) = f(x + α d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub phi0: f64,
    pub dphi0: f64,
    pub alpha: f64,
    pub phi: f64,
    pub dphi: f64,
}

impl StepRecord {
    /// Both strong Wolfe inequalities for constants `c1`, `c2`.
    pub fn strong_wolfe(&self, c1: f64, c2: f64) -> bool {
        self.phi <= self.phi0 + c1 * self.alpha * self.dphi0 && self.dphi.abs() <= c2 * self.dphi0.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    /// Loss at the start and after every iteration.
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub evaluations: usize,
    pub restarts: usize,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Tensor,
    pub loss: f64,
    pub grad: Tensor,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Trace,
}

struct Point {
    x: Tensor,
    f: f64,
    g: Tensor,
}

/// Evaluates the objective; errors and non-finite values count as `+∞`.
fn probe<F>(f: &mut F, x: Tensor, evals: &mut usize) -> Point
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    *evals += 1;
    match f(&x) {
        Ok((v, g)) if v.is_finite() && g.is_finite() => Point { x, f: v, g },
        _ => {
            let g = Tensor::zeros(x.dims());
            Point {
                x,
                f: f64::INFINITY,
                g,
            }
        }
    }
}

/// Minimizer of the cubic through `(a, fa, da)`, `(b, fb, db)`, when defined.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    x: &'a Tensor,
    d: &'a Tensor,
    phi0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
    budget: usize,
    evals: &'a mut usize,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    fn eval(&mut self, alpha: f64) -> Option<(Point, f64)> {
        if self.budget == 0 {
            return None;
        }
        self.budget -= 1;
        let x = self.x.axpy(alpha, self.d).ok()?;
        let p = probe(self.f, x, self.evals);
        let dphi = if p.f.is_finite() { p.g.dot(self.d) } else { f64::NAN };
        Some((p, dphi))
    }

    fn armijo_fails(&self, alpha: f64, phi: f64) -> bool {
        !(phi <= self.phi0 + self.c1 * alpha * self.dphi0)
    }

    fn curvature_ok(&self, dphi: f64) -> bool {
        dphi.abs() <= -self.c2 * self.dphi0
    }

    /// Bracketing phase; returns the accepted point and its step record.
    fn run(&mut self, alpha1: f64) -> Option<(Point, StepRecord)> {
        let (mut a_prev, mut f_prev, mut d_prev) = (0.0, self.phi0, self.dphi0);
        let mut a = alpha1;
        let mut first = true;
        loop {
            let (p, da) = self.eval(a)?;
            if self.armijo_fails(a, p.f) || (!first && p.f >= f_prev) {
                return self.zoom((a_prev, f_prev, d_prev), (a, p.f, da));
            }
            if self.curvature_ok(da) {
                return Some(self.accept(a, p, da));
            }
            if da >= 0.0 {
                return self.zoom((a, p.f, da), (a_prev, f_prev, d_prev));
            }
            (a_prev, f_prev, d_prev) = (a, p.f, da);
            a *= 2.0;
            first = false;
        }
    }

    fn zoom(&mut self, mut lo: (f64, f64, f64), mut hi: (f64, f64, f64)) -> Option<(Point, StepRecord)> {
        loop {
            let (a_lo, a_hi) = (lo.0, hi.0);
            let width = (a_hi - a_lo).abs();
            if width <= f64::EPSILON * a_lo.abs().max(a_hi.abs()) {
                return None;
            }
            let (left, right) = (a_lo.min(a_hi), a_lo.max(a_hi));
            let safe = |t: f64| (left + 0.1 * width..=right - 0.1 * width).contains(&t);
            let a = if hi.1.is_finite() && hi.2.is_finite() {
                cubic_min(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2)
                    .filter(|&t| safe(t))
                    .unwrap_or(0.5 * (a_lo + a_hi))
            } else {
                0.5 * (a_lo + a_hi)
            };
            let (p, da) = self.eval(a)?;
            if self.armijo_fails(a, p.f) || p.f >= lo.1 {
                hi = (a, p.f, da);
            } else {
                if self.curvature_ok(da) {
                    return Some(self.accept(a, p, da));
                }
                if da * (hi.0 - lo.0) >= 0.0 {
                    hi = lo;
                }
                lo = (a, p.f, da);
            }
        }
    }

    fn accept(&self, alpha: f64, p: Point, dphi: f64) -> (Point, StepRecord) {
        let rec = StepRecord {
            phi0: self.phi0,
            dphi0: self.dphi0,
            alpha,
            phi: p.f,
            dphi,
        };
        (p, rec)
    }
}

/// Two-loop recursion: `-H g` from the stored `(s, y)` pairs.
fn two_loop(g: &Tensor, pairs: &VecDeque<(Tensor, Tensor, f64)>) -> Result<Tensor> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * s.dot(&q);
        q = q.axpy(-a, y)?;
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        q = q.scale(s.dot(y) / y.dot(y));
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q = q.axpy(a - b, s)?;
    }
    Ok(q.scale(-1.0))
}

/// Minimizes `f` from `x0` with L-BFGS. A failed line search clears the
/// memory and retries along steepest descent once; a second consecutive
/// failure stops with the current (best) iterate.
pub fn lbfgs<F>(mut f: F, x0: &Tensor, cfg: &LbfgsConfig) -> Result<Minimum>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    cfg.validate()?;
    let (f0, g0) = f(x0)?;
    if !f0.is_finite() {
        return Err(Error::Evaluation { x: f0 });
    }
    if !g0.same_dims(x0) || !g0.is_finite() {
        return Err(Error::numeric("objective gradient is non-finite or mis-shaped"));
    }
    let mut cur = Point {
        x: x0.clone(),
        f: f0,
        g: g0,
    };
    let mut trace = Trace {
        losses: vec![f0],
        grad_norms: vec![cur.g.norm()],
        steps: Vec::new(),
        evaluations: 1,
        restarts: 0,
    };
    let mut pairs: VecDeque<(Tensor, Tensor, f64)> = VecDeque::new();
    let mut iterations = 0;
    let termination = loop {
        let gnorm = cur.g.norm();
        if gnorm <= cfg.grad_tol {
            break Termination::GradTol;
        }
        if iterations >= cfg.max_iter {
            break Termination::MaxIter;
        }
        let mut steepest = pairs.is_empty();
        let mut d = if steepest { cur.g.scale(-1.0) } else { two_loop(&cur.g, &pairs)? };
        if !(d.dot(&cur.g) < 0.0) {
            pairs.clear();
            steepest = true;
            d = cur.g.scale(-1.0);
        }
        let accepted = loop {
            let alpha1 = if steepest && iterations == 0 { (1.0 / gnorm).min(1.0) } else { 1.0 };
            let mut ls = LineSearch {
                f: &mut f,
                x: &cur.x,
                d: &d,
                phi0: cur.f,
                dphi0: d.dot(&cur.g),
                c1: cfg.c1,
                c2: cfg.c2,
                budget: cfg.max_ls,
                evals: &mut trace.evaluations,
            };
            match ls.run(alpha1) {
                Some(hit) => break Some(hit),
                None if !steepest => {
                    log::debug!("line search failed at iteration {iterations}; restarting from steepest descent");
                    trace.restarts += 1;
                    pairs.clear();
                    steepest = true;
                    d = cur.g.scale(-1.0);
                }
                None => break None,
            }
        };
        let Some((next, rec)) = accepted else {
            break Termination::LineSearchFailed;
        };
        let s = next.x.axpy(-1.0, &cur.x)?;
        let y = next.g.axpy(-1.0, &cur.g)?;
        let sy = s.dot(&y);
        if cfg.memory > 0 && sy > 1e-10 * s.norm() * y.norm() {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        cur = next;
        iterations += 1;
        trace.steps.push(rec);
        trace.losses.push(cur.f);
        trace.grad_norms.push(cur.g.norm());
    };
    Ok(Minimum {
        x: cur.x,
        loss: cur.f,
        grad: cur.g,
        iterations,
        termination,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 1000,
        }
    }
}

/// Adam with bias correction; returns the final iterate and the loss per step.
pub fn adam<F>(mut f: F, x0: &Tensor, cfg: &AdamConfig) -> Result<(Tensor, Vec<f64>)>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    if !(cfg.lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be > 0, got {}", cfg.lr)));
    }
    let mut x = x0.clone();
    let mut m = Tensor::zeros(x.dims());
    let mut v = Tensor::zeros(x.dims());
    let mut losses = Vec::with_capacity(cfg.steps);
    for k in 1..=cfg.steps {
        let (loss, g) = f(&x)?;
        losses.push(loss);
        m = m.zip_map(&g, |a, b| cfg.beta1 * a + (1.0 - cfg.beta1) * b)?;
        v = v.zip_map(&g, |a, b| cfg.beta2 * a + (1.0 - cfg.beta2) * b * b)?;
        let c1 = 1.0 - cfg.beta1.powi(k as i32);
        let c2 = 1.0 - cfg.beta2.powi(k as i32);
        let step = m.zip_map(&v, |a, b| cfg.lr * (a / c1) / ((b / c2).sqrt() + cfg.eps))?;
        x = x.axpy(-1.0, &step)?;
    }
    Ok((x, losses))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(a: Tensor) -> impl FnMut(&Tensor) -> Result<(f64, Tensor)> {
        move |x| {
            let r = x.axpy(-1.0, &a)?;
            Ok((0.5 * r.dot(&r), r))
        }
    }

    fn rosenbrock(x: &Tensor) -> Result<(f64, Tensor)> {
        let (a, b) = (x.data()[0], x.data()[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, Tensor::from_vec(g)))
    }

    fn all_wolfe(m: &Minimum, cfg: &LbfgsConfig) -> bool {
        m.trace.steps.iter().all(|s| s.strong_wolfe(cfg.c1, cfg.c2))
    }

    #[test]
    fn quadratic_in_two_iterations() {
        let cfg = LbfgsConfig {
            grad_tol: 1e-12,
            ..Default::default()
        };
        let a = Tensor::from_vec(vec![3.0, -1.0, 0.5, 7.0]);
        let m = lbfgs(quad(a.clone()), &Tensor::zeros(&[4]), &cfg).unwrap();
        assert_eq!(m.termination, Termination::GradTol);
        assert!(m.iterations <= 2);
        assert!(m.x.axpy(-1.0, &a).unwrap().max_abs() < 1e-12);
        assert!(all_wolfe(&m, &cfg));
    }

    #[test]
    fn rosenbrock_minimum() {
        let cfg = LbfgsConfig {
            grad_tol: 1e-10,
            max_iter: 500,
            ..Default::default()
        };
        let m = lbfgs(rosenbrock, &Tensor::from_vec(vec![-1.2, 1.0]), &cfg).unwrap();
        assert!((m.x.data()[0] - 1.0).abs() < 1e-6 && (m.x.data()[1] - 1.0).abs() < 1e-6);
        assert!(all_wolfe(&m, &cfg));
        assert!(m.trace.losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn ill_scaled_quadratic() {
        let cfg = LbfgsConfig {
            grad_tol: 1e-8,
            ..Default::default()
        };
        let f = |x: &Tensor| {
            let g = Tensor::from_vec(vec![x.data()[0], 1e4 * x.data()[1]]);
            Ok((0.5 * x.dot(&g), g))
        };
        let m = lbfgs(f, &Tensor::from_vec(vec![1.0, 1.0]), &cfg).unwrap();
        assert_eq!(m.termination, Termination::GradTol);
        assert!(m.iterations <= 60, "{} iterations", m.iterations);
    }

    #[test]
    fn zero_memory_is_gradient_descent() {
        let cfg = LbfgsConfig {
            memory: 0,
            max_iter: 5,
            grad_tol: 0.0,
            ..Default::default()
        };
        let f = |x: &Tensor| {
            let g = Tensor::from_vec(vec![x.data()[0], 10.0 * x.data()[1]]);
            Ok((0.5 * x.dot(&g), g))
        };
        let x0 = Tensor::from_vec(vec![1.0, 1.0]);
        let m = lbfgs(f, &x0, &cfg).unwrap();
        assert_eq!(m.iterations, 5);
        // every accepted step is parallel to the gradient at its start point
        let mut x = x0;
        for s in &m.trace.steps {
            let (_, g) = f(&x).unwrap();
            x = x.axpy(-s.alpha, &g).unwrap();
        }
        assert!(x.axpy(-1.0, &m.x).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn failing_objective_stops_with_best() {
        // finite only on a shrinking neighborhood: the search cannot make progress
        let f = |x: &Tensor| {
            let v = x.data()[0];
            if v < 1.0 - 1e-300 {
                Err(Error::Evaluation { x: v })
            } else {
                Ok((-v, Tensor::from_vec(vec![-1.0])))
            }
        };
        let x0 = Tensor::from_vec(vec![1.0]);
        let m = lbfgs(f, &x0, &LbfgsConfig::default()).unwrap();
        assert!(m.loss <= -1.0);
        assert!(m.loss.is_finite());
        let bad = |_: &Tensor| Ok((f64::NAN, Tensor::zeros(&[1])));
        assert!(matches!(lbfgs(bad, &x0, &LbfgsConfig::default()), Err(Error::Evaluation { .. })));
    }

    #[test]
    fn config_validation() {
        let bad = LbfgsConfig {
            c1: 0.9,
            c2: 0.1,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn adam_behaviour() {
        let f = |x: &Tensor| Ok((0.5 * x.dot(x), x.clone()));
        let cfg = AdamConfig {
            lr: 1e-3,
            steps: 200,
            ..Default::default()
        };
        let mut xs = Vec::new();
        let mut rec = |x: &Tensor| {
            xs.push(x.data()[0].abs());
            f(x)
        };
        adam(&mut rec, &Tensor::from_vec(vec![1.0]), &cfg).unwrap();
        assert!(xs.windows(2).all(|w| w[1] < w[0]));
        let (x, _) = adam(f, &Tensor::from_vec(vec![0.0]), &cfg).unwrap();
        assert_eq!(x.data()[0], 0.0);
        let cfg = AdamConfig {
            lr: 1e-2,
            steps: 5000,
            ..Default::default()
        };
        let (x, _) = adam(f, &Tensor::from_vec(vec![1.0, -2.0]), &cfg).unwrap();
        assert!(x.max_abs() < 1e-3, "{:?}", x.data());
    }
}
