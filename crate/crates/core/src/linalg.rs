//! Small dense linear-algebra helpers over `faer` matrices.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues in ascending order.
pub fn sym_eigen(m: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let eig = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::numerical(format!("eigendecomposition did not converge: {e:?}")))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let values = order.iter().map(|&k| s[k]).collect();
    let vectors = Mat::from_fn(n, n, |i, c| u[(i, order[c])]);
    Ok((values, vectors))
}

/// Solves `a x = b` for symmetric positive-definite `a` by Cholesky.
pub fn spd_solve(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<Mat<f64>> {
    if a.nrows() == 0 {
        return Ok(Mat::zeros(0, b.ncols()));
    }
    let llt = a
        .llt(Side::Lower)
        .map_err(|_| Error::numerical("system matrix is not numerically positive definite"))?;
    Ok(llt.solve(b))
}

/// Solves `a x = b` for a symmetric positive-definite `a` and vector right-hand side.
pub fn spd_solve_vec(a: MatRef<'_, f64>, b: &[f64]) -> Result<Vec<f64>> {
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = spd_solve(a, rhs.as_ref())?;
    Ok((0..b.len()).map(|i| x[(i, 0)]).collect())
}

pub fn is_symmetric(m: MatRef<'_, f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Replaces `m` by `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut Mat<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn frob_sq(m: MatRef<'_, f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            acc += m[(i, j)] * m[(i, j)];
        }
    }
    acc
}

/// Column-major vectorization: entry `(i, j)` lands at `j * nrows + i`.
pub fn vectorize(m: MatRef<'_, f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.nrows() * m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            v.push(m[(i, j)]);
        }
    }
    v
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &[f64], nrows: usize, ncols: usize) -> Mat<f64> {
    assert_eq!(v.len(), nrows * ncols, "vector length does not match shape");
    Mat::from_fn(nrows, ncols, |i, j| v[j * nrows + i])
}

/// Dense Kronecker product `a ⊗ b`.
pub fn kron(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let (br, bc) = (b.nrows(), b.ncols());
    Mat::from_fn(a.nrows() * br, a.ncols() * bc, |r, c| {
        a[(r / br, c / bc)] * b[(r % br, c % bc)]
    })
}

pub fn col_to_vec(m: MatRef<'_, f64>, j: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub(crate) fn check_finite(m: MatRef<'_, f64>, what: &str) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::invalid(format!(
                    "{what} has a non-finite entry at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}
