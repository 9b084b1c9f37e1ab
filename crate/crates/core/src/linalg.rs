//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{OpeError, Result};

pub type Matrix = DMatrix<f64>;

/// Solves `a x = b` with partial-pivot LU.
pub fn solve(a: Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(OpeError::DimensionMismatch {
            what: "linear system",
            expected: n,
            got: b.len(),
        });
    }
    let rhs = DVector::from_column_slice(b);
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| OpeError::Singular(format!("{n}x{n} system has no unique solution")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(OpeError::Singular("solution is not finite".into()));
    }
    Ok(x.iter().copied().collect())
}

/// Row-vector times matrix: `(vᵀ M)ᵀ`.
pub fn vec_mat(v: &[f64], m: &Matrix) -> Vec<f64> {
    (0..m.ncols())
        .map(|j| v.iter().enumerate().map(|(i, vi)| vi * m[(i, j)]).sum())
        .collect()
}

/// Matrix times column vector.
pub fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| v.iter().enumerate().map(|(j, vj)| m[(i, j)] * vj).sum())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}
