//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SolverError};

pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let x = a.clone().lu().solve(b).ok_or(SolverError::Singular(what))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(SolverError::Singular(what))
    }
}

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(*v))
}

/// Smallest eigenvalue of the symmetric part `(A + A^T) / 2`.
pub fn min_sym_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(*v))
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, n, n).qr().q()
}

/// `Q^T diag(d) Q` with eigenvalues spread over `[lo, hi]`, both ends attained.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = random_orthogonal(rng, n);
    let mut d: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    d[0] = lo;
    if n > 1 {
        d[n - 1] = hi;
    }
    let a = q.transpose() * DMatrix::from_diagonal(&DVector::from_vec(d)) * &q;
    (&a + a.transpose()) * 0.5
}

/// Random `rows x cols` matrix whose largest singular value equals `scale`.
pub fn random_with_spectral_norm<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    if scale == 0.0 {
        return DMatrix::zeros(rows, cols);
    }
    let g = gaussian_matrix(rng, rows, cols);
    let norm = spectral_norm(&g);
    g * (scale / norm)
}

pub fn to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], expect_rows: usize, expect_cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != expect_rows || rows.iter().any(|r| r.len() != expect_cols) {
        return Err(SolverError::InvalidParams(format!(
            "matrix {what} must be {expect_rows}x{expect_cols}"
        )));
    }
    let m = DMatrix::from_fn(expect_rows, expect_cols, |i, j| rows[i][j]);
    if m.iter().all(|v| v.is_finite()) {
        Ok(m)
    } else {
        Err(SolverError::NonFinite("matrix payload"))
    }
}
