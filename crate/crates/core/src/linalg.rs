//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<Complex64>;

pub fn scaled_identity(dim: usize, scale: f64) -> CMatrix {
    CMatrix::from_diagonal_element(dim, dim, C64::new(scale, 0.0))
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// `tr(a * b)` without forming the product.
pub fn trace_prod(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// `tr(a * b * c)`.
pub fn trace_prod3(a: &CMatrix, b: &CMatrix, c: &CMatrix) -> C64 {
    trace_prod(&(a * b), c)
}

/// MMSE operator `R C^{-1}` for Hermitian positive definite `C`, via Cholesky.
pub fn right_solve_hpd(r: &CMatrix, c: &CMatrix) -> Result<CMatrix> {
    let not_pd = || Error::Numerical("observation covariance is not positive definite".into());
    let chol = Cholesky::new(c.clone()).ok_or_else(not_pd)?;
    // the complex factorization takes complex square roots of the pivots
    if chol.l_dirty().diagonal().iter().any(|v| !(v.re > 0.0) || v.im.abs() > 1e-12 * v.re) {
        return Err(not_pd());
    }
    // (R C^{-1})^H = C^{-1} R^H
    Ok(chol.solve(&r.adjoint()).adjoint())
}

/// Principal square root of a Hermitian PSD matrix; tiny negative
/// eigenvalues from round-off are treated as zero.
pub fn hermitian_sqrt(m: &CMatrix) -> CMatrix {
    if is_diagonal(m, 0.0) {
        return CMatrix::from_diagonal(&m.diagonal().map(|v| C64::new(v.re.max(0.0).sqrt(), 0.0)));
    }
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|v| C64::new(v.max(0.0).sqrt(), 0.0));
    &eig.eigenvectors * CMatrix::from_diagonal(&roots) * eig.eigenvectors.adjoint()
}

pub fn is_diagonal(m: &CMatrix, tol: f64) -> bool {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j && m[(i, j)].norm() > tol {
                return false;
            }
        }
    }
    true
}

/// True when `m` equals `scale * I` up to `tol` relative to `scale`.
pub fn is_scaled_identity(m: &CMatrix, scale: f64, tol: f64) -> bool {
    let bound = tol * scale.abs().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let expect = if i == j { scale } else { 0.0 };
            if (m[(i, j)] - C64::new(expect, 0.0)).norm() > bound {
                return false;
            }
        }
    }
    true
}

pub fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    let scale = m.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    (m - m.adjoint()).iter().all(|v| v.norm() <= tol * scale)
}

/// `a^H b`.
#[inline]
pub fn dotc(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[inline]
pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// `out = m * x`.
#[inline]
pub fn matvec(m: &CMatrix, x: &[C64], out: &mut [C64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (j, xj) in x.iter().enumerate() {
            acc += m[(i, j)] * xj;
        }
        *o = acc;
    }
}
