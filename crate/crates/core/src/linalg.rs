//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative eigenvalue cutoff used by every pseudo-inverse in the crate.
pub const PINV_RTOL: f64 = 1e-10;

pub fn col_means(a: &DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows().max(1) as f64;
    DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.sum() / n))
}

pub fn center_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for mut c in out.column_iter_mut() {
        let m = c.mean();
        c.add_scalar_mut(-m);
    }
    out
}

pub fn as_column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Inverse of a symmetric positive definite matrix.
///
/// Fails when the Cholesky factor has a pivot below `1e-12` of the largest
/// diagonal entry, which catches numerically collinear columns.
pub fn spd_inverse(a: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!("{name} is not square")));
    }
    if a.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let scale = a.diagonal().max();
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(name.to_string()))?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, &d| m.min(d * d));
    if scale.is_nan() || scale <= 0.0 || min_pivot <= 1e-12 * scale {
        return Err(Error::Singular(name.to_string()));
    }
    Ok(chol.inverse())
}

/// Moore-Penrose inverse of a symmetric matrix via its eigendecomposition.
///
/// Eigenvalues with magnitude at or below `rtol * max(|lambda|_max, scale)` are
/// dropped. Passing the magnitude of a parent matrix as `scale` keeps a
/// numerically zero block from having its rounding noise inverted. Only the
/// symmetric part of `a` is used.
pub fn pinv(a: &DMatrix<f64>, rtol: f64, scale: f64) -> DMatrix<f64> {
    if a.is_empty() {
        return DMatrix::zeros(a.ncols(), a.nrows());
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.amax();
    let cut = rtol * lmax.max(scale);
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > cut {
            let v = eig.eigenvectors.column(i);
            out += (v * v.transpose()) / l;
        }
    }
    out
}

/// Largest absolute eigenvalue proxy for a symmetric matrix (the max row sum).
pub fn norm_inf(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn quad_form(x: &DVector<f64>, a: &DMatrix<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.dot(&(a * x))
}
