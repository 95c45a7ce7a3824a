//! A small reverse-mode tape over dense tensors.
//!
//! Values are recorded eagerly; `backward` walks the tape once from the
//! output towards the leaves. Loops (whitening, ICA) are differentiated by
//! recording every executed iteration.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::Tensor;

/// Eigenvalue gap below which eigenvector derivatives are refused.
pub const EIG_GAP: f64 = 1e-8;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    tape: u64,
}

/// A user-supplied differentiable operation with its own vector-Jacobian
/// product.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;
    /// One cotangent per input, each shaped like that input.
    fn vjp(&self, inputs: &[&Tensor], output: &Tensor, cotangent: &Tensor) -> Result<Vec<Tensor>>;
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Powi(usize, i32),
    Powf(usize, f64),
    Sum(usize),
    Mean(usize),
    Variance(usize),
    L2Norm(usize),
    SumAxis(usize),
    Broadcast(usize),
    Reshape(usize),
    DiagExtract(usize),
    DiagConstruct(usize),
    EigVals(usize, Tensor),
    EigVecs(usize, Vec<f64>),
    Custom(Box<dyn CustomOp>, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
    visited: usize,
    dims: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.idx >= self.dims.len() {
            return Err(Error::Lookup(format!("variable {} is not on this tape", v.idx)));
        }
        Ok(match self.grads.get(v.idx).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.dims[v.idx]),
        })
    }

    /// Number of nodes processed by the sweep.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

fn same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) -> Result<()> {
    match &mut grads[idx] {
        Some(acc) => {
            same(acc, &g, "gradient accumulation")?;
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot => *slot = Some(g),
    }
    Ok(())
}

fn diag_matrix(d: &[f64]) -> Tensor {
    let n = d.len();
    let mut m = Tensor::zeros(&[n, n]);
    for (i, &v) in d.iter().enumerate() {
        m.set2(i, i, v);
    }
    m
}

fn symmetrize(a: &Tensor) -> Result<Tensor> {
    let at = a.transpose()?;
    a.zip_map(&at, |x, y| 0.5 * (x + y))
}

/// Sums `g` down to `src` extents (inverse of broadcasting).
fn reduce_to(g: &Tensor, src: &[usize]) -> Result<Tensor> {
    let n: usize = src.iter().product();
    if n == 1 {
        return Tensor::new(src.to_vec(), vec![g.sum()]);
    }
    let (r, c) = (g.rows(), g.cols());
    let mut out = vec![0.0; n];
    if src == [r, 1] {
        for i in 0..r {
            out[i] = g.data()[i * c..(i + 1) * c].iter().sum();
        }
    } else {
        for i in 0..r {
            for j in 0..c {
                out[j] += g.get2(i, j);
            }
        }
    }
    Tensor::new(src.to_vec(), out)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            idx: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Lookup(format!("variable {} is not on this tape", v.idx)));
        }
        Ok(v.idx)
    }

    fn val(&self, v: Var) -> Result<&Tensor> {
        let i = self.check(v)?;
        Ok(&self.nodes[i].value)
    }

    /// Records an input (differentiable or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        self.val(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a)?.matmul(self.val(b)?)?;
        Ok(self.push(out, Op::MatMul(a.idx, b.idx)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a)?.transpose()?;
        Ok(self.push(out, Op::Transpose(a.idx)))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (x, y) = (self.val(a)?, self.val(b)?);
        same(x, y, "elementwise op")?;
        let out = x.zip_map(y, f)?;
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a.idx, b.idx))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a.idx, b.idx))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a.idx, b.idx))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x / y, Op::Div(a.idx, b.idx))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.val(a)?.scale(s);
        Ok(self.push(out, Op::Scale(a.idx, s)))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.val(a)?.map(|x| x + c);
        Ok(self.push(out, Op::AddScalar(a.idx)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a)?.map(f64::tanh);
        Ok(self.push(out, Op::Tanh(a.idx)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a)?.map(f64::exp);
        Ok(self.push(out, Op::Exp(a.idx)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a)?;
        if x.data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Domain("log of a non-positive entry".into()));
        }
        let out = x.map(f64::ln);
        Ok(self.push(out, Op::Log(a.idx)))
    }

    pub fn powi(&mut self, a: Var, p: i32) -> Result<Var> {
        let out = self.val(a)?.map(|x| x.powi(p));
        Ok(self.push(out, Op::Powi(a.idx, p)))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        let x = self.val(a)?;
        if x.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("fractional power of a negative entry".into()));
        }
        let out = x.map(|v| v.powf(p));
        Ok(self.push(out, Op::Powf(a.idx, p)))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.powf(a, 0.5)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.val(a)?.sum());
        Ok(self.push(out, Op::Sum(a.idx)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.val(a)?.mean());
        Ok(self.push(out, Op::Mean(a.idx)))
    }

    /// Unbiased sample variance over all entries.
    pub fn variance(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a)?;
        let n = x.len();
        if n < 2 {
            return Err(Error::shape("variance needs at least two entries"));
        }
        let m = x.mean();
        let v = x.data().iter().map(|&t| (t - m) * (t - m)).sum::<f64>() / (n - 1) as f64;
        Ok(self.push(Tensor::scalar(v), Op::Variance(a.idx)))
    }

    pub fn l2norm(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.val(a)?.norm());
        Ok(self.push(out, Op::L2Norm(a.idx)))
    }

    /// Row sums (`axis = 1`, giving `[r, 1]`) or column sums (`axis = 0`, giving `[1, c]`).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.val(a)?;
        if x.dims().len() != 2 || axis > 1 {
            return Err(Error::shape("sum_axis needs a matrix and axis 0 or 1"));
        }
        let dims = if axis == 1 { [x.rows(), 1] } else { [1, x.cols()] };
        let out = reduce_to(x, &dims)?;
        Ok(self.push(out, Op::SumAxis(a.idx)))
    }

    /// Broadcasts a `[r,1]`, `[1,c]` or single-entry value to `dims`.
    pub fn broadcast(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let x = self.val(a)?;
        let out = if x.len() == 1 {
            Tensor::filled(dims, x.item())
        } else if dims.len() == 2 && x.dims() == [dims[0], 1] {
            let mut t = Tensor::zeros(dims);
            for i in 0..dims[0] {
                for j in 0..dims[1] {
                    t.set2(i, j, x.data()[i]);
                }
            }
            t
        } else if dims.len() == 2 && x.dims() == [1, dims[1]] {
            let mut t = Tensor::zeros(dims);
            for i in 0..dims[0] {
                t.data_mut()[i * dims[1]..(i + 1) * dims[1]].copy_from_slice(x.data());
            }
            t
        } else {
            return Err(Error::shape(format!("cannot broadcast {:?} to {dims:?}", x.dims())));
        };
        Ok(self.push(out, Op::Broadcast(a.idx)))
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let out = self.val(a)?.reshape(dims)?;
        Ok(self.push(out, Op::Reshape(a.idx)))
    }

    /// Diagonal of a square matrix as a vector.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a)?;
        if x.dims().len() != 2 || x.rows() != x.cols() {
            return Err(Error::shape(format!("diag of {:?}", x.dims())));
        }
        let d: Vec<f64> = (0..x.rows()).map(|i| x.get2(i, i)).collect();
        Ok(self.push(Tensor::from_vec(d), Op::DiagExtract(a.idx)))
    }

    /// Square diagonal matrix from the entries of `a`.
    pub fn diag_matrix(&mut self, a: Var) -> Result<Var> {
        let out = diag_matrix(self.val(a)?.data());
        Ok(self.push(out, Op::DiagConstruct(a.idx)))
    }

    /// Eigenvalues (ascending) and unit eigenvectors (columns) of a symmetric matrix.
    pub fn symeig(&mut self, a: Var) -> Result<(Var, Var)> {
        let (vals, vecs) = linalg::symmetric_eigen(self.val(a)?)?;
        let lv = self.push(Tensor::from_vec(vals.clone()), Op::EigVals(a.idx, vecs.clone()));
        let uv = self.push(vecs, Op::EigVecs(a.idx, vals));
        Ok((lv, uv))
    }

    /// Records `value` as the output of a custom differentiable op.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], value: Tensor) -> Result<Var> {
        let idx = inputs.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        Ok(self.push(value, Op::Custom(op, idx)))
    }

    /// Gradient of the scalar `head` with respect to `leaf`.
    pub fn grad(&self, head: Var, leaf: Var) -> Result<Tensor> {
        self.check(leaf)?;
        let h = self.val(head)?;
        if h.len() != 1 {
            return Err(Error::shape(format!("gradient head must be scalar, got {:?}", h.dims())));
        }
        let seed = Tensor::filled(h.dims(), 1.0);
        self.backward(head, &seed)?.wrt(leaf)
    }

    /// Vector-Jacobian product of `out` against `cotangent` for every node.
    pub fn backward(&self, out: Var, cotangent: &Tensor) -> Result<Gradients> {
        let o = self.check(out)?;
        same(&self.nodes[o].value, cotangent, "cotangent")?;
        let mut grads: Vec<Option<Tensor>> = vec![None; o + 1];
        grads[o] = Some(cotangent.clone());
        let mut visited = 0;
        for i in (0..=o).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            visited += 1;
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            visited,
            dims: self.nodes.iter().map(|n| n.value.dims().to_vec()).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let v = |k: usize| &self.nodes[k].value;
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.matmul(&v(*b).transpose()?)?)?;
                accumulate(grads, *b, v(*a).transpose()?.matmul(g)?)?;
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()?)?,
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(v(*b), |x, y| x * y)?)?;
                accumulate(grads, *b, g.zip_map(v(*a), |x, y| x * y)?)?;
            }
            Op::Div(a, b) => {
                accumulate(grads, *a, g.zip_map(v(*b), |x, y| x / y)?)?;
                let t = g.zip_map(out, |x, q| x * q)?;
                accumulate(grads, *b, t.zip_map(v(*b), |x, y| -x / y)?)?;
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s))?,
            Op::AddScalar(a) => accumulate(grads, *a, g.clone())?,
            Op::Tanh(a) => accumulate(grads, *a, g.zip_map(out, |x, t| x * (1.0 - t * t))?)?,
            Op::Exp(a) => accumulate(grads, *a, g.zip_map(out, |x, e| x * e)?)?,
            Op::Log(a) => accumulate(grads, *a, g.zip_map(v(*a), |x, y| x / y)?)?,
            Op::Powi(a, p) => {
                let p = *p;
                let d = v(*a).map(|y| p as f64 * y.powi(p - 1));
                accumulate(grads, *a, g.zip_map(&d, |x, y| x * y)?)?;
            }
            Op::Powf(a, p) => {
                let p = *p;
                let d = v(*a).map(|y| p * y.powf(p - 1.0));
                accumulate(grads, *a, g.zip_map(&d, |x, y| x * y)?)?;
            }
            Op::Sum(a) => accumulate(grads, *a, Tensor::filled(v(*a).dims(), g.item()))?,
            Op::Mean(a) => {
                let x = v(*a);
                accumulate(grads, *a, Tensor::filled(x.dims(), g.item() / x.len() as f64))?;
            }
            Op::Variance(a) => {
                let x = v(*a);
                let m = x.mean();
                let c = 2.0 * g.item() / (x.len() - 1) as f64;
                accumulate(grads, *a, x.map(|t| c * (t - m)))?;
            }
            Op::L2Norm(a) => {
                let n = out.item();
                if n == 0.0 {
                    return Err(Error::Norm);
                }
                let c = g.item() / n;
                accumulate(grads, *a, v(*a).scale(c))?;
            }
            Op::SumAxis(a) => {
                let dims = v(*a).dims().to_vec();
                let mut t = Tensor::zeros(&dims);
                for r in 0..dims[0] {
                    for c in 0..dims[1] {
                        let gv = if g.dims()[1] == 1 { g.data()[r] } else { g.data()[c] };
                        t.set2(r, c, gv);
                    }
                }
                accumulate(grads, *a, t)?;
            }
            Op::Broadcast(a) => accumulate(grads, *a, reduce_to(g, v(*a).dims())?)?,
            Op::Reshape(a) => accumulate(grads, *a, g.reshape(v(*a).dims())?)?,
            Op::DiagExtract(a) => accumulate(grads, *a, diag_matrix(g.data()))?,
            Op::DiagConstruct(a) => {
                let d: Vec<f64> = (0..g.rows()).map(|k| g.get2(k, k)).collect();
                accumulate(grads, *a, Tensor::new(v(*a).dims().to_vec(), d)?)?;
            }
            Op::EigVals(a, u) => {
                let lam = out.data();
                let gd = g.data();
                for p in 0..lam.len() {
                    for q in 0..p {
                        let gap = (lam[p] - lam[q]).abs();
                        if gap < EIG_GAP && gd[p] != gd[q] {
                            return Err(Error::Degeneracy { gap });
                        }
                    }
                }
                let m = u.matmul(&diag_matrix(gd))?.matmul(&u.transpose()?)?;
                accumulate(grads, *a, symmetrize(&m)?)?;
            }
            Op::EigVecs(a, lam) => {
                let u = out;
                let mut m = u.transpose()?.matmul(g)?;
                let n = lam.len();
                for p in 0..n {
                    for q in 0..n {
                        if p == q {
                            m.set2(p, q, 0.0);
                            continue;
                        }
                        let gap = lam[q] - lam[p];
                        let mv = m.get2(p, q);
                        if gap.abs() < EIG_GAP {
                            if mv != 0.0 {
                                return Err(Error::Degeneracy { gap: gap.abs() });
                            }
                            continue;
                        }
                        m.set2(p, q, mv / gap);
                    }
                }
                let r = u.matmul(&m)?.matmul(&u.transpose()?)?;
                accumulate(grads, *a, symmetrize(&r)?)?;
            }
            Op::Custom(op, inputs) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&k| v(k)).collect();
                let cots = op.vjp(&ins, out, g)?;
                if cots.len() != inputs.len() {
                    return Err(Error::shape(format!(
                        "custom op {} returned {} cotangents for {} inputs",
                        op.name(),
                        cots.len(),
                        inputs.len()
                    )));
                }
                for (&k, c) in inputs.iter().zip(cots) {
                    same(v(k), &c, op.name())?;
                    accumulate(grads, k, c)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn sym(n: usize, seed: u64) -> Tensor {
        let a = Tensor::randn(&[n, n], &mut rng(seed));
        symmetrize(&a).unwrap()
    }

    /// Dot test: `<J dx, ybar>` by Richardson-extrapolated central differences
    /// against `<dx, vjp(ybar)>`.
    fn dot_test(x: &Tensor, dx: &Tensor, op: impl Fn(&mut Tape, Var) -> Result<Var>, seed: u64) {
        let eval = |xx: &Tensor| {
            let mut t = Tape::new();
            let l = t.leaf(xx.clone());
            let o = op(&mut t, l).unwrap();
            t.value(o).unwrap().clone()
        };
        let y = eval(x);
        let ybar = Tensor::randn(y.dims(), &mut rng(seed));
        let cd = |h: f64| {
            let yp = eval(&x.axpy(h, dx).unwrap());
            let ym = eval(&x.axpy(-h, dx).unwrap());
            yp.axpy(-1.0, &ym).unwrap().dot(&ybar) / (2.0 * h)
        };
        let h = 1e-3;
        let jdx = (4.0 * cd(h / 2.0) - cd(h)) / 3.0;
        let mut t = Tape::new();
        let l = t.leaf(x.clone());
        let o = op(&mut t, l).unwrap();
        let g = t.backward(o, &ybar).unwrap().wrt(l).unwrap();
        let rhs = dx.dot(&g);
        let scale = jdx.abs().max(rhs.abs()).max(1e-300);
        assert!((jdx - rhs).abs() / scale <= 1e-9, "fd {jdx} vs vjp {rhs}");
    }

    fn matrix(r: usize, c: usize, seed: u64) -> Tensor {
        Tensor::randn(&[r, c], &mut rng(seed))
    }

    #[test]
    fn grad_sum_of_squares() {
        let x = matrix(3, 4, 1);
        let mut t = Tape::new();
        let l = t.leaf(x.clone());
        let sq = t.mul(l, l).unwrap();
        let h = t.sum(sq).unwrap();
        let g = t.grad(h, l).unwrap();
        assert_eq!(g, x.scale(2.0));
    }

    #[test]
    fn grad_frobenius_of_product() {
        let w = matrix(3, 3, 2);
        let vv = matrix(3, 7, 3);
        let mut t = Tape::new();
        let wl = t.leaf(w.clone());
        let vl = t.leaf(vv.clone());
        let wt = t.transpose(wl).unwrap();
        let p = t.matmul(wt, vl).unwrap();
        let sq = t.mul(p, p).unwrap();
        let h = t.sum(sq).unwrap();
        let g = t.grad(h, wl).unwrap();
        let expect = vv.matmul(&vv.transpose().unwrap()).unwrap().matmul(&w).unwrap().scale(2.0);
        for (a, b) in g.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn grad_top_eigenvalue() {
        let c = sym(5, 4);
        let mut t = Tape::new();
        let l = t.leaf(c.clone());
        let (vals, _) = t.symeig(l).unwrap();
        let head = {
            let d = t.value(vals).unwrap().len();
            let mut sel = vec![0.0; d];
            sel[d - 1] = 1.0;
            let s = t.leaf(Tensor::from_vec(sel));
            let m = t.mul(vals, s).unwrap();
            t.sum(m).unwrap()
        };
        let g = t.grad(head, l).unwrap();
        // finite-difference oracle over symmetric perturbations of each entry pair
        let top = |m: &Tensor| linalg::symmetric_eigen(m).unwrap().0[4];
        let h = 1e-6;
        for i in 0..5 {
            for j in 0..=i {
                let mut e = Tensor::zeros(&[5, 5]);
                e.set2(i, j, 1.0);
                e.set2(j, i, 1.0);
                let fd = (top(&c.axpy(h, &e).unwrap()) - top(&c.axpy(-h, &e).unwrap())) / (2.0 * h);
                let an = g.dot(&e);
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "({i},{j}) {fd} {an}");
            }
        }
        let (_, u) = linalg::symmetric_eigen(&c).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((g.get2(i, j) - u.get2(i, 4) * u.get2(j, 4)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grad_mean_and_norm() {
        let x = matrix(1, 6, 5);
        let mut t = Tape::new();
        let l = t.leaf(x.clone());
        let m = t.mean(l).unwrap();
        assert!(t.grad(m, l).unwrap().data().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-16));
        let n = t.l2norm(l).unwrap();
        let g = t.grad(n, l).unwrap();
        let expect = x.scale(1.0 / x.norm());
        for (a, b) in g.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_variance_matches_fd() {
        let x = matrix(2, 5, 6);
        let mut t = Tape::new();
        let l = t.leaf(x.clone());
        let v = t.variance(l).unwrap();
        let g = t.grad(v, l).unwrap();
        let var = |y: &Tensor| {
            let m = y.mean();
            y.data().iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (y.len() - 1) as f64
        };
        let h = 1e-5;
        for k in 0..x.len() {
            let mut e = Tensor::zeros(x.dims());
            e.data_mut()[k] = 1.0;
            let fd = (var(&x.axpy(h, &e).unwrap()) - var(&x.axpy(-h, &e).unwrap())) / (2.0 * h);
            assert!((fd - g.data()[k]).abs() <= 1e-7 * g.data()[k].abs().max(1e-3));
        }
    }

    #[test]
    fn foreign_leaf_is_lookup_error() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.leaf(Tensor::scalar(1.0));
        let y = b.leaf(Tensor::scalar(2.0));
        let s = a.sum(x).unwrap();
        assert!(matches!(a.grad(s, y), Err(Error::Lookup(_))));
        assert!(matches!(a.exp(y), Err(Error::Lookup(_))));
    }

    #[test]
    fn shape_mismatch_is_shape_error() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2, 3]));
        let b = t.leaf(Tensor::zeros(&[3, 2]));
        assert!(matches!(t.add(a, b), Err(Error::Shape(_))));
        let c = t.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(t.matmul(a, c), Err(Error::Shape(_))));
    }

    #[test]
    fn degenerate_eigenvectors_refused() {
        let mut t = Tape::new();
        let l = t.leaf(Tensor::identity(3));
        let (_, u) = t.symeig(l).unwrap();
        let ubar = Tensor::randn(&[3, 3], &mut rng(7));
        assert!(matches!(t.backward(u, &ubar), Err(Error::Degeneracy { .. })));
    }

    #[test]
    fn sweep_visits_each_node_once() {
        let mut t = Tape::new();
        let mut v = t.leaf(Tensor::from_vec(vec![0.1, 0.2]));
        for _ in 0..50 {
            v = t.tanh(v).unwrap();
        }
        let h = t.sum(v).unwrap();
        let g = t.backward(h, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.visited(), t.len());
        assert_eq!(t.len(), 52);
    }

    #[test]
    fn dot_tests_elementwise_and_reductions() {
        let x = matrix(3, 4, 10).map(|v| v.abs() + 0.5);
        let dx = matrix(3, 4, 11);
        let dx = dx.scale(1.0 / dx.norm());
        type OpFn = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;
        let ops: Vec<OpFn> = vec![
            Box::new(|t, a| t.tanh(a)),
            Box::new(|t, a| t.exp(a)),
            Box::new(|t, a| t.log(a)),
            Box::new(|t, a| t.powi(a, 3)),
            Box::new(|t, a| t.powf(a, -0.5)),
            Box::new(|t, a| t.sum(a)),
            Box::new(|t, a| t.mean(a)),
            Box::new(|t, a| t.variance(a)),
            Box::new(|t, a| t.l2norm(a)),
            Box::new(|t, a| t.transpose(a)),
            Box::new(|t, a| t.scale(a, -1.7)),
            Box::new(|t, a| t.add_scalar(a, 2.0)),
            Box::new(|t, a| t.sum_axis(a, 0)),
            Box::new(|t, a| t.sum_axis(a, 1)),
            Box::new(|t, a| {
                let s = t.sum_axis(a, 1)?;
                t.broadcast(s, &[3, 4])
            }),
            Box::new(|t, a| {
                let s = t.sum_axis(a, 0)?;
                t.broadcast(s, &[3, 4])
            }),
            Box::new(|t, a| {
                let b = t.tanh(a)?;
                let p = t.mul(a, b)?;
                let q = t.div(p, a)?;
                let r = t.sub(q, b)?;
                t.add(r, a)
            }),
            Box::new(|t, a| {
                let at = t.transpose(a)?;
                t.matmul(a, at)
            }),
            Box::new(|t, a| {
                let r = t.reshape(a, &[4, 3])?;
                t.matmul(a, r)
            }),
        ];
        for (k, op) in ops.iter().enumerate() {
            dot_test(&x, &dx, op, 100 + k as u64);
        }
    }

    #[test]
    fn dot_tests_diag_and_eig() {
        let c = sym(4, 20);
        let dc = sym(4, 21);
        let dc = dc.scale(1.0 / dc.norm());
        dot_test(&c, &dc, |t, a| t.diag(a), 30);
        dot_test(&c, &dc, |t, a| {
            let d = t.diag(a)?;
            t.diag_matrix(d)
        }, 31);
        dot_test(&c, &dc, |t, a| Ok(t.symeig(a)?.0), 32);
        // eigenvector signs are pinned, so the vectors are smooth in the input
        dot_test(&c, &dc, |t, a| Ok(t.symeig(a)?.1), 33);
        dot_test(&c, &dc, |t, a| {
            let (l, u) = t.symeig(a)?;
            let s = t.powi(l, 2)?;
            let d = t.diag_matrix(s)?;
            let ud = t.matmul(u, d)?;
            let ut = t.transpose(u)?;
            t.matmul(ud, ut)
        }, 34);
    }

    #[test]
    fn gradients_are_deterministic() {
        let x = matrix(4, 4, 40);
        let run = || {
            let mut t = Tape::new();
            let l = t.leaf(x.clone());
            let a = t.transpose(l).unwrap();
            let b = t.matmul(a, l).unwrap();
            let c = t.tanh(b).unwrap();
            let h = t.l2norm(c).unwrap();
            t.grad(h, l).unwrap()
        };
        assert_eq!(run().data(), run().data());
    }
}
