use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub(crate) fn sym_eigen(matrix: DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = matrix.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(matrix, f64::EPSILON, 10_000).ok_or(Error::ConvergenceFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Minimum-norm least-squares solution of `a x = b`.
///
/// Returns the solution and whether `a` was numerically rank deficient.
pub(crate) fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let cols = a.ncols();
    if cols == 0 {
        return (DVector::zeros(0), false);
    }
    if a.nrows() == 0 {
        return (DVector::zeros(cols), true);
    }
    // Column equilibration keeps the rank test meaningful for badly scaled designs.
    let norms: Vec<f64> = (0..cols)
        .map(|j| {
            let n = a.column(j).norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(a.nrows(), cols, |i, j| a[(i, j)] / norms[j]);
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-11 * (a.nrows().max(cols) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let y = svd
        .solve(b, tol)
        .expect("SVD computed with both factors");
    let x = DVector::from_iterator(cols, (0..cols).map(|j| y[j] / norms[j]));
    (x, rank < cols)
}

/// Solves a symmetric positive semidefinite system.
///
/// Cholesky when the matrix is numerically definite; otherwise the minimum-norm solution from
/// the eigendecomposition, with the second value set to `true`.
pub(crate) fn solve_psd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let scale = a.diagonal().iter().fold(0.0f64, |m, &d| m.max(d.abs())).max(f64::MIN_POSITIVE);
    if let Some(chol) = a.clone().cholesky() {
        let diag_min = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, &d| m.min(d));
        if diag_min * diag_min > 1e-13 * scale {
            return Ok((chol.solve(b), false));
        }
    }
    let (values, vectors) = sym_eigen(a.clone())?;
    let vmax = values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let tol = vmax * 1e-12 * a.nrows() as f64;
    let mut coeffs = vectors.transpose() * b;
    for (i, mut row) in coeffs.row_iter_mut().enumerate() {
        let v = values[i];
        if v > tol {
            row /= v;
        } else {
            row.fill(0.0);
        }
    }
    Ok((&vectors * coeffs, true))
}

/// `U diag(d) U^T`.
pub(crate) fn spectral_matrix(u: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = u.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= d[j];
    }
    let mut out = &scaled * u.transpose();
    symmetrize(&mut out);
    out
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute entry of `q^T q - I`.
pub(crate) fn orthonormality_deviation(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    let mut dev = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((g[(i, j)] - target).abs());
        }
    }
    dev
}

/// `diag(u_i^T m u_i)` for every column of `u`.
pub(crate) fn quadratic_diag(u: &DMatrix<f64>, m: &DMatrix<f64>) -> DVector<f64> {
    let mu = m * u;
    DVector::from_iterator(u.ncols(), (0..u.ncols()).map(|i| u.column(i).dot(&mu.column(i))))
}
