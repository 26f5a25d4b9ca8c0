//! Thin helpers over `faer` for the dense operations used across the crate.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};

use crate::error::{numerical, Result};

pub fn col(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn col_to_vec(m: &Mat<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

pub fn diag(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), v.len(), |i, j| if i == j { v[i] } else { 0.0 })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn matvec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    let y = a * faer::ColRef::from_slice(x);
    y.iter().copied().collect()
}

/// `aᵀ x`.
pub fn matvec_t(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    let y = a.transpose() * faer::ColRef::from_slice(x);
    y.iter().copied().collect()
}

/// `xᵀ a y`.
pub fn quad(a: MatRef<'_, f64>, x: &[f64], y: &[f64]) -> f64 {
    dot(x, &matvec(a, y))
}

pub fn trace_product(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}

pub fn max_abs(a: MatRef<'_, f64>) -> f64 {
    let mut m: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

pub fn max_asymmetry(a: MatRef<'_, f64>) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..i {
            m = m.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    m
}

pub fn symmetrize(a: &mut Mat<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// 2-norm condition number from singular values.
pub fn condition_number(a: MatRef<'_, f64>) -> Result<f64> {
    let s = match a.singular_values() {
        Ok(s) => s,
        Err(e) => return numerical(format!("singular value decomposition failed: {e:?}")),
    };
    let hi = s.iter().cloned().fold(0.0, f64::max);
    let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(if lo == 0.0 { f64::INFINITY } else { hi / lo })
}

/// Solves `a x = b` by partially pivoted LU.
pub fn solve(a: MatRef<'_, f64>, b: &[f64]) -> Vec<f64> {
    let lu = a.partial_piv_lu();
    col_to_vec(&lu.solve(col(b)))
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.
pub fn sym_eigen(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    match a.self_adjoint_eigen(Side::Lower) {
        Ok(e) => {
            let s = e.S().column_vector();
            let vals = (0..a.nrows()).map(|i| s[i]).collect();
            Ok((vals, e.U().to_owned()))
        }
        Err(e) => numerical(format!("symmetric eigendecomposition failed: {e:?}")),
    }
}

pub fn min_sym_eigenvalue(a: MatRef<'_, f64>) -> Result<f64> {
    match a.self_adjoint_eigenvalues(Side::Lower) {
        Ok(v) => Ok(v.into_iter().fold(f64::INFINITY, f64::min)),
        Err(e) => numerical(format!("symmetric eigendecomposition failed: {e:?}")),
    }
}

/// Spectral radius of a real square matrix.
pub fn spectral_radius(a: MatRef<'_, f64>) -> Result<f64> {
    match a.eigenvalues() {
        Ok(v) => Ok(v.iter().map(|z| z.norm()).fold(0.0, f64::max)),
        Err(e) => numerical(format!("eigenvalue computation failed: {e:?}")),
    }
}
