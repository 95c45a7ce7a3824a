//! Dense linear-algebra helpers backed by `nalgebra`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn to_matrix(t: &Tensor) -> Result<DMatrix<f64>> {
    if t.dims().len() != 2 {
        return Err(Error::shape(format!("expected a matrix, got {:?}", t.dims())));
    }
    Ok(DMatrix::from_row_slice(t.rows(), t.cols(), t.data()))
}

pub(crate) fn from_matrix(m: &DMatrix<f64>) -> Tensor {
    let (r, c) = m.shape();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(m[(i, j)]);
        }
    }
    Tensor::new(vec![r, c], data).expect("matrix extents are non-zero")
}

/// Eigen-decomposition of a symmetric matrix: eigenvalues in ascending order
/// and the matching unit eigenvectors as columns. Each eigenvector is signed
/// so that its largest-magnitude entry is positive.
pub fn symmetric_eigen(a: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let m = to_matrix(a)?;
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::shape(format!("eigen-decomposition of non-square {:?}", a.dims())));
    }
    if !a.is_finite() {
        return Err(Error::numeric("non-finite matrix entries"));
    }
    let scale = a.max_abs().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::Domain("matrix is not symmetric".into()));
            }
        }
    }
    let sym = (&m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = Tensor::zeros(&[n, n]);
    for (k, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let pivot = col.iter().fold(0.0f64, |p, &x| if x.abs() > p.abs() { x } else { p });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vecs.set2(i, k, sign * col[i]);
        }
    }
    Ok((vals, vecs))
}

/// Solves `A X = B` by LU with partial pivoting.
pub fn solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let am = to_matrix(a)?;
    let bm = to_matrix(b)?;
    if am.nrows() != am.ncols() || am.nrows() != bm.nrows() {
        return Err(Error::shape(format!("solve {:?} with {:?}", a.dims(), b.dims())));
    }
    let x = am
        .lu()
        .solve(&bm)
        .ok_or_else(|| Error::numeric("singular matrix in linear solve"))?;
    Ok(from_matrix(&x))
}

pub fn determinant(a: &Tensor) -> Result<f64> {
    let m = to_matrix(a)?;
    if m.nrows() != m.ncols() {
        return Err(Error::shape(format!("determinant of non-square {:?}", a.dims())));
    }
    Ok(m.determinant())
}

/// Largest singular value.
pub fn spectral_norm(a: &Tensor) -> Result<f64> {
    let m = to_matrix(a)?;
    Ok(m.singular_values().iter().fold(0.0f64, |p, &s| p.max(s)))
}
