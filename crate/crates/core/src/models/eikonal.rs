//! Eikonal traveltime tomography: fast sweeping for `|∇T| = 1/c` with a
//! first-order Godunov upwind stencil, and its discrete adjoint.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stage::{check_cotangent, Pullback, Stage};
use crate::tensor::Tensor;

/// Smallest Chebyshev radius (in cells) of the source box that is
/// initialized with straight-ray times.
pub const MIN_SOURCE_RADIUS: usize = 3;
/// The source box spans `1/SOURCE_BOX_DIVISOR` of the grid extent, so it
/// keeps a fixed physical size under refinement.
pub const SOURCE_BOX_DIVISOR: usize = 16;
pub const SWEEP_TOL: f64 = 1e-9;
pub const MAX_ROUNDS: usize = 100;

pub const DESK_GRID: usize = 64;
pub const DESK_SPACING: f64 = 0.004;
pub const DESK_SOURCES_PER_SIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Top,
    Bottom,
    Left,
    Right,
}

impl Side {
    fn contains(self, (i, j): (usize, usize), rows: usize, cols: usize) -> bool {
        match self {
            Side::Top => i == 0,
            Side::Bottom => i == rows - 1,
            Side::Left => j == 0,
            Side::Right => j == cols - 1,
        }
    }
}

/// Grid spacing, boundary sources and, per source, the boundary receivers
/// that do not lie on the source's side.
#[derive(Debug, Clone, PartialEq)]
pub struct EikonalGeometry {
    rows: usize,
    cols: usize,
    spacing: f64,
    sources: Vec<(usize, usize)>,
    receivers: Vec<Vec<(usize, usize)>>,
}

impl EikonalGeometry {
    /// `per_side` sources evenly spaced on each of the four sides at
    /// positions `(2k+1)·n/(2·per_side)`.
    pub fn new(rows: usize, cols: usize, spacing: f64, per_side: usize) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Config(format!("grid spacing must be > 0, got {spacing}")));
        }
        if rows < 2 || cols < 2 || per_side == 0 {
            return Err(Error::Config(format!(
                "eikonal geometry needs a 2x2 grid and at least one source per side, got {rows}x{cols}, {per_side}"
            )));
        }
        let at = |n: usize, k: usize| ((2 * k + 1) * n) / (2 * per_side);
        let mut sources = Vec::new();
        let mut sides = Vec::new();
        for side in [Side::Top, Side::Bottom, Side::Left, Side::Right] {
            for k in 0..per_side {
                let pos = match side {
                    Side::Top => (0, at(cols, k)),
                    Side::Bottom => (rows - 1, at(cols, k)),
                    Side::Left => (at(rows, k), 0),
                    Side::Right => (at(rows, k), cols - 1),
                };
                sources.push(pos);
                sides.push(side);
            }
        }
        let boundary: Vec<(usize, usize)> = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .filter(|&(i, j)| i == 0 || j == 0 || i == rows - 1 || j == cols - 1)
            .collect();
        let receivers = sides
            .iter()
            .map(|&s| boundary.iter().copied().filter(|&p| !s.contains(p, rows, cols)).collect())
            .collect();
        Ok(Self {
            rows,
            cols,
            spacing,
            sources,
            receivers,
        })
    }

    /// 64×64 cells at 4 mm spacing with four sources per side.
    pub fn desk() -> Self {
        Self::new(DESK_GRID, DESK_GRID, DESK_SPACING, DESK_SOURCES_PER_SIDE)
            .expect("desk geometry is valid")
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn sources(&self) -> &[(usize, usize)] {
        &self.sources
    }

    pub fn receivers(&self, source: usize) -> &[(usize, usize)] {
        &self.receivers[source]
    }

    /// Receivers per source; identical for every source.
    pub fn receiver_count(&self) -> usize {
        self.receivers[0].len()
    }

    pub fn table_dims(&self) -> [usize; 2] {
        [self.sources.len(), self.receiver_count()]
    }
}

fn check_velocity(c: &Tensor) -> Result<(usize, usize)> {
    if c.dims().len() != 2 {
        return Err(Error::shape(format!("velocity must be 2D, got {:?}", c.dims())));
    }
    if let Some(v) = c.data().iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("velocity must be positive and finite, found {v}")));
    }
    Ok((c.rows(), c.cols()))
}

struct Grid<'a> {
    rows: usize,
    cols: usize,
    t: &'a [f64],
}

impl Grid<'_> {
    /// Smaller vertical and horizontal neighbor values with their indices.
    fn upwind(&self, i: usize, j: usize) -> ((f64, usize), (f64, usize)) {
        let k = i * self.cols + j;
        let pick = |x: Option<usize>, y: Option<usize>| {
            let vx = x.map_or(f64::INFINITY, |p| self.t[p]);
            let vy = y.map_or(f64::INFINITY, |p| self.t[p]);
            if vx <= vy {
                (vx, x.unwrap_or(usize::MAX))
            } else {
                (vy, y.unwrap_or(usize::MAX))
            }
        };
        let a = pick(
            (i > 0).then(|| k - self.cols),
            (i + 1 < self.rows).then(|| k + self.cols),
        );
        let b = pick((j > 0).then(|| k - 1), (j + 1 < self.cols).then(|| k + 1));
        (a, b)
    }
}

/// Godunov update from upwind values `a`, `b` and local cost `f = h/c`.
fn godunov(a: f64, b: f64, f: f64) -> f64 {
    if (a - b).abs() >= f {
        a.min(b) + f
    } else {
        0.5 * (a + b + (2.0 * f * f - (a - b) * (a - b)).sqrt())
    }
}

/// Radius of the analytic source box: a fixed fraction of the grid extent,
/// never below [`MIN_SOURCE_RADIUS`] cells.
pub fn source_radius(rows: usize, cols: usize) -> usize {
    (rows.max(cols) / SOURCE_BOX_DIVISOR).max(MIN_SOURCE_RADIUS)
}

fn source_box(rows: usize, cols: usize, (si, sj): (usize, usize)) -> impl Iterator<Item = (usize, usize)> {
    let r = source_radius(rows, cols);
    (si.saturating_sub(r)..=(si + r).min(rows - 1))
        .flat_map(move |i| (sj.saturating_sub(r)..=(sj + r).min(cols - 1)).map(move |j| (i, j)))
}

/// First-arrival traveltimes from a point source on a grid of spacing `h`.
/// Cells within [`source_radius`] of the source take the straight-ray time
/// in the source velocity and stay fixed during the sweeps.
pub fn eikonal_solve(c: &Tensor, h: f64, source: (usize, usize)) -> Result<Tensor> {
    let (rows, cols) = check_velocity(c)?;
    if !(h > 0.0) {
        return Err(Error::Config(format!("grid spacing must be > 0, got {h}")));
    }
    if source.0 >= rows || source.1 >= cols {
        return Err(Error::Domain(format!("source {source:?} outside {rows}x{cols} grid")));
    }
    let cv = c.data();
    let mut t = vec![f64::INFINITY; rows * cols];
    let mut fixed = vec![false; rows * cols];
    let c_src = cv[source.0 * cols + source.1];
    for (i, j) in source_box(rows, cols, source) {
        let di = i as f64 - source.0 as f64;
        let dj = j as f64 - source.1 as f64;
        t[i * cols + j] = h * (di * di + dj * dj).sqrt() / c_src;
        fixed[i * cols + j] = true;
    }
    let orders: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];
    for _ in 0..MAX_ROUNDS {
        let mut max_update = 0.0f64;
        for &(rev_i, rev_j) in &orders {
            for ii in 0..rows {
                let i = if rev_i { rows - 1 - ii } else { ii };
                for jj in 0..cols {
                    let j = if rev_j { cols - 1 - jj } else { jj };
                    let k = i * cols + j;
                    if fixed[k] {
                        continue;
                    }
                    let ((a, _), (b, _)) = Grid { rows, cols, t: &t }.upwind(i, j);
                    if a.is_infinite() && b.is_infinite() {
                        continue;
                    }
                    let cand = godunov(a, b, h / cv[k]);
                    if cand < t[k] {
                        let step = if t[k].is_finite() { t[k] - cand } else { f64::INFINITY };
                        max_update = max_update.max(step);
                        t[k] = cand;
                    }
                }
            }
        }
        let t_max = t.iter().fold(0.0f64, |m, &v| m.max(v));
        if max_update <= SWEEP_TOL * t_max {
            return Tensor::new(vec![rows, cols], t);
        }
    }
    let best = t.iter().fold(0.0f64, |m, &v| m.max(v));
    Err(Error::convergence("fast sweeping", MAX_ROUNDS, best))
}

/// Back-propagates `seed = ∂χ/∂T` through a converged single-source solve
/// and returns `∂χ/∂c`.
pub fn eikonal_adjoint(c: &Tensor, t: &Tensor, h: f64, source: (usize, usize), seed: &Tensor) -> Result<Tensor> {
    let (rows, cols) = check_velocity(c)?;
    if t.dims() != c.dims() || seed.dims() != c.dims() {
        return Err(Error::shape(format!(
            "adjoint fields {:?}, {:?} vs velocity {:?}",
            t.dims(),
            seed.dims(),
            c.dims()
        )));
    }
    let cv = c.data();
    let tv = t.data();
    let mut fixed = vec![false; rows * cols];
    for (i, j) in source_box(rows, cols, source) {
        fixed[i * cols + j] = true;
    }
    let mut lam = seed.data().to_vec();
    let mut gf = vec![0.0; rows * cols];
    let mut order: Vec<usize> = (0..rows * cols).filter(|&k| !fixed[k]).collect();
    order.sort_by(|&p, &q| tv[q].total_cmp(&tv[p]));
    let grid = Grid { rows, cols, t: tv };
    for k in order {
        let l = lam[k];
        if l == 0.0 {
            continue;
        }
        let (i, j) = (k / cols, k % cols);
        let ((a, ka), (b, kb)) = grid.upwind(i, j);
        let f = h / cv[k];
        if (a - b).abs() >= f {
            gf[k] += l;
            lam[if a <= b { ka } else { kb }] += l;
        } else {
            let s = (2.0 * f * f - (a - b) * (a - b)).sqrt();
            gf[k] += l * f / s;
            lam[ka] += l * 0.5 * (1.0 - (a - b) / s);
            lam[kb] += l * 0.5 * (1.0 + (a - b) / s);
        }
    }
    let ks = source.0 * cols + source.1;
    let mut gc: Vec<f64> = (0..rows * cols).map(|k| -gf[k] * h / (cv[k] * cv[k])).collect();
    for (i, j) in source_box(rows, cols, source) {
        let k = i * cols + j;
        gc[ks] -= lam[k] * tv[k] / cv[ks];
    }
    Tensor::new(vec![rows, cols], gc)
}

fn check_geometry(c: &Tensor, geom: &EikonalGeometry) -> Result<()> {
    check_velocity(c)?;
    if c.dims() != geom.dims() {
        return Err(Error::shape(format!("velocity {:?} vs geometry {:?}", c.dims(), geom.dims())));
    }
    Ok(())
}

/// Traveltime fields for every source, solved in parallel.
pub fn solve_all(c: &Tensor, geom: &EikonalGeometry) -> Result<Vec<Tensor>> {
    check_geometry(c, geom)?;
    geom.sources
        .par_iter()
        .map(|&s| eikonal_solve(c, geom.spacing, s))
        .collect()
}

/// Receiver table `[sources, receivers]` extracted from solved fields.
pub fn receiver_table(fields: &[Tensor], geom: &EikonalGeometry) -> Result<Tensor> {
    let cols = geom.cols;
    let mut out = Vec::with_capacity(geom.sources.len() * geom.receiver_count());
    for (s, t) in fields.iter().enumerate() {
        out.extend(geom.receivers(s).iter().map(|&(i, j)| t.data()[i * cols + j]));
    }
    Tensor::new(geom.table_dims().to_vec(), out)
}

/// `∂χ/∂c` for a receiver-table residual, summed over sources.
pub fn traveltime_adjoint(
    c: &Tensor,
    fields: &[Tensor],
    residual: &Tensor,
    geom: &EikonalGeometry,
) -> Result<Tensor> {
    check_geometry(c, geom)?;
    if residual.dims() != geom.table_dims() || fields.len() != geom.sources.len() {
        return Err(Error::shape(format!(
            "residual {:?} vs table {:?}",
            residual.dims(),
            geom.table_dims()
        )));
    }
    let nr = geom.receiver_count();
    let parts: Vec<Tensor> = (0..geom.sources.len())
        .into_par_iter()
        .map(|s| {
            let mut seed = Tensor::zeros(c.dims());
            for (r, &(i, j)) in geom.receivers(s).iter().enumerate() {
                seed.data_mut()[i * geom.cols + j] += residual.data()[s * nr + r];
            }
            eikonal_adjoint(c, &fields[s], geom.spacing, geom.sources[s], &seed)
        })
        .collect::<Result<_>>()?;
    let mut g = Tensor::zeros(c.dims());
    for p in &parts {
        g = g.axpy(1.0, p)?;
    }
    Ok(g)
}

/// Velocity `c ↦` receiver traveltimes for all sources.
pub struct EikonalStage {
    geom: EikonalGeometry,
}

impl EikonalStage {
    pub fn new(geom: EikonalGeometry) -> Self {
        Self { geom }
    }

    pub fn geometry(&self) -> &EikonalGeometry {
        &self.geom
    }
}

impl Stage for EikonalStage {
    fn name(&self) -> &str {
        "eikonal"
    }

    fn forward(&self, c: &Tensor) -> Result<(Tensor, Pullback)> {
        let fields = solve_all(c, &self.geom)?;
        let table = receiver_table(&fields, &self.geom)?;
        let geom = self.geom.clone();
        let c = c.clone();
        let dims = table.dims().to_vec();
        Ok((
            table,
            Pullback::new(move |g| {
                check_cotangent(&dims, g)?;
                traveltime_adjoint(&c, &fields, g, &geom)
            }),
        ))
    }
}

pub const VELOCITY_MIN: f64 = 1500.0;
pub const VELOCITY_RANGE: f64 = 100.0;

/// `c = 100·(m+1)/2 + 1500` m/s; entries outside `[-1, 1]` are clamped.
pub fn velocity_map(m: &Tensor) -> Tensor {
    let clipped = m.data().iter().filter(|v| v.abs() > 1.0).count();
    if clipped > 0 {
        log::warn!("clamping {clipped} model entries outside [-1, 1] before the velocity map");
    }
    m.map(|v| VELOCITY_RANGE * 0.5 * (v.clamp(-1.0, 1.0) + 1.0) + VELOCITY_MIN)
}

pub struct VelocityStage;

impl Stage for VelocityStage {
    fn name(&self) -> &str {
        "velocity"
    }

    fn forward(&self, m: &Tensor) -> Result<(Tensor, Pullback)> {
        let c = velocity_map(m);
        let m = m.clone();
        Ok((
            c,
            Pullback::new(move |g| {
                check_cotangent(m.dims(), g)?;
                m.zip_map(g, |v, gv| if v.abs() <= 1.0 { 0.5 * VELOCITY_RANGE * gv } else { 0.0 })
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_errors(n: usize, h: f64) -> (f64, f64) {
        let c = Tensor::filled(&[n, n], 1.0);
        let s = (n / 2, n / 2);
        let t = eikonal_solve(&c, h, s).unwrap();
        let (mut worst, mut worst_abs) = (0.0f64, 0.0f64);
        for i in 0..n {
            for j in 0..n {
                let (di, dj) = (i as f64 - s.0 as f64, j as f64 - s.1 as f64);
                if di.abs().max(dj.abs()) <= MIN_SOURCE_RADIUS as f64 {
                    continue;
                }
                let exact = h * (di * di + dj * dj).sqrt();
                let e = (t.get2(i, j) - exact).abs();
                worst = worst.max(e / exact);
                worst_abs = worst_abs.max(e);
            }
        }
        (worst, worst_abs)
    }

    #[test]
    fn homogeneous_accuracy_and_refinement() {
        assert!(max_errors(128, 1.0).0 <= 0.02);
        let ratio = max_errors(64, 1.0 / 64.0).1 / max_errors(128, 1.0 / 128.0).1;
        assert!((1.7..=2.3).contains(&ratio), "refinement ratio {ratio}");
    }

    #[test]
    fn velocity_scaling_halves_time() {
        let c1 = Tensor::filled(&[20, 20], 1.0);
        let t1 = eikonal_solve(&c1, 0.1, (0, 7)).unwrap();
        let t2 = eikonal_solve(&c1.scale(2.0), 0.1, (0, 7)).unwrap();
        for (a, b) in t1.data().iter().zip(t2.data()) {
            assert!((a - 2.0 * b).abs() <= 1e-14 * a.max(1.0));
        }
    }

    #[test]
    fn rejects_bad_velocity() {
        let mut c = Tensor::filled(&[8, 8], 1.0);
        c.set2(3, 3, 0.0);
        assert!(matches!(eikonal_solve(&c, 1.0, (0, 0)), Err(Error::Domain(_))));
    }

    #[test]
    fn adjoint_matches_central_differences() {
        let n = 24;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = Tensor::new(vec![n, n], (0..n * n).map(|_| 1500.0 + 100.0 * rng.random::<f64>()).collect())
            .unwrap();
        let geom = EikonalGeometry::new(n, n, 0.004, 2).unwrap();
        let stage = EikonalStage::new(geom);
        let (t0, pb) = stage.forward(&c).unwrap();
        let obs = t0.map(|v| v * 0.97);
        let resid = t0.axpy(-1.0, &obs).unwrap();
        let g = pb.apply(&resid).unwrap();
        let chi = |c: &Tensor| {
            let (t, _) = stage.forward(c).unwrap();
            0.5 * t.axpy(-1.0, &obs).unwrap().data().iter().map(|v| v * v).sum::<f64>()
        };
        for _ in 0..5 {
            let k = rng.random_range(0..n * n);
            let e = 1e-3;
            let mut cp = c.clone();
            cp.data_mut()[k] += e;
            let mut cm = c.clone();
            cm.data_mut()[k] -= e;
            let fd = (chi(&cp) - chi(&cm)) / (2.0 * e);
            let rel = (fd - g.data()[k]).abs() / g.data()[k].abs().max(1e-30);
            assert!(rel <= 1e-4, "cell {k}: fd {fd:e} adjoint {:e}", g.data()[k]);
        }
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let geom = EikonalGeometry::new(16, 16, 0.004, 1).unwrap();
        let c = Tensor::filled(&[16, 16], 1550.0);
        let fields = solve_all(&c, &geom).unwrap();
        let g = traveltime_adjoint(&c, &fields, &Tensor::zeros(&geom.table_dims()), &geom).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn desk_geometry_layout() {
        let g = EikonalGeometry::desk();
        assert_eq!(g.sources().len(), 16);
        assert_eq!(&g.sources()[..4], &[(0, 8), (0, 24), (0, 40), (0, 56)]);
        assert_eq!(g.receiver_count(), 252 - 64);
        for s in 0..16 {
            assert!(!g.receivers(s).contains(&g.sources()[s]));
        }
    }

    #[test]
    fn velocity_map_endpoints() {
        let c = velocity_map(&Tensor::from_vec(vec![-1.0, 0.0, 1.0, 2.0]));
        assert_eq!(c.data(), &[1500.0, 1550.0, 1600.0, 1600.0]);
    }
}
