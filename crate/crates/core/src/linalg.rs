//! Small dense helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower Cholesky factor of `matrix`.
///
/// A factor is accepted only if every pivot `L_ii^2` clears `p * eps * max|a_ii|`;
/// a rank-deficient matrix that squeaks through on rounding is still rejected.
/// With `allow_jitter`, one retry adds `1e-10 * trace / p` to the diagonal.
/// Returns the factor and the jitter actually applied.
pub(crate) fn cholesky_lower(
    matrix: &DMatrix<f64>,
    allow_jitter: bool,
    what: &'static str,
) -> Result<(DMatrix<f64>, f64)> {
    let p = matrix.nrows();
    if p == 0 || matrix.ncols() != p {
        return Err(Error::InvalidParameter(format!("{what} must be a non-empty square matrix")));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("{what} has non-finite entries")));
    }
    if let Some(l) = try_factor(matrix.clone()) {
        return Ok((l, 0.0));
    }
    if allow_jitter {
        let jitter = 1e-10 * matrix.trace() / p as f64;
        if jitter > 0.0 {
            let mut shifted = matrix.clone();
            for i in 0..p {
                shifted[(i, i)] += jitter;
            }
            if let Some(l) = try_factor(shifted) {
                return Ok((l, jitter));
            }
        }
    }
    Err(Error::NotPositiveDefinite(what))
}

fn try_factor(matrix: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = matrix.nrows();
    let scale = matrix.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = p as f64 * f64::EPSILON * scale;
    let l = matrix.cholesky()?.unpack();
    if (0..p).all(|i| l[(i, i)] * l[(i, i)] > floor) {
        Some(l)
    } else {
        None
    }
}

/// Solves `L w = b` for lower-triangular `L`.
pub(crate) fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut w = b.clone();
    l.solve_lower_triangular_mut(&mut w);
    w
}

/// Column-wise `L^{-1} B`.
pub(crate) fn solve_lower_columns(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut w = b.clone();
    l.solve_lower_triangular_mut(&mut w);
    w
}

/// Solves `A x = b` through the factor of SPD `A`.
pub(crate) fn spd_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let p = m.nrows();
    m.ncols() == p
        && (0..p).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= rel_tol * scale))
}

/// Matrix with `diag` on the diagonal and `off` everywhere else.
pub(crate) fn compound_symmetric(p: usize, diag: f64, off: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| if i == j { diag } else { off })
}
