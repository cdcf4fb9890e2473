//! Thin wrappers over faer for the dense kernels used by the descriptors.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::error::{Result, UtsError};

fn to_mat(a: &[f64], n: usize) -> Mat<f64> {
    Mat::from_fn(n, n, |i, j| a[i * n + j])
}

/// Eigenvalues of a symmetric row-major `n × n` matrix, descending.
pub fn symmetric_eigenvalues(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let m = to_mat(a, n);
    let mut vals = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| UtsError::Estimation(format!("eigenvalue solver failed: {e:?}")))?;
    vals.reverse();
    Ok(vals)
}

/// Eigen-decomposition of a symmetric matrix.
///
/// Returns eigenvalues in descending order and the matching unit eigenvectors,
/// `vectors[k]` being the k-th eigenvector.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let m = to_mat(a, n);
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| UtsError::Estimation(format!("eigen solver failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let mut vals = Vec::with_capacity(n);
    let mut vecs = Vec::with_capacity(n);
    for k in (0..n).rev() {
        vals.push(s[k]);
        vecs.push((0..n).map(|i| u[(i, k)]).collect());
    }
    Ok((vals, vecs))
}

/// Solve `A x = b` for symmetric `A`: Cholesky first, partial-pivot LU when
/// the matrix is not numerically positive definite. Up to three steps of
/// iterative refinement reuse the factorization.
pub fn solve_symmetric(a: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let m = to_mat(a, n);
    let rhs = Mat::from_fn(n, 1, |i, _| b[i]);
    let solve: Box<dyn Fn(&Mat<f64>) -> Mat<f64>> = match m.llt(Side::Lower) {
        Ok(llt) => Box::new(move |r| llt.solve(r)),
        Err(_) => {
            let lu = m.partial_piv_lu();
            Box::new(move |r| lu.solve(r))
        }
    };
    let residual = |x: &Mat<f64>| {
        let r = &rhs - &m * x;
        let norm = (0..n).map(|i| r[(i, 0)].abs()).fold(0.0, f64::max);
        (r, norm)
    };
    let mut x = solve(&rhs);
    let (mut r, mut norm) = residual(&x);
    for _ in 0..3 {
        if !(norm > 0.0) {
            break;
        }
        let candidate = &x + solve(&r);
        let (next_r, next_norm) = residual(&candidate);
        if !(next_norm < norm) {
            break;
        }
        (x, r, norm) = (candidate, next_r, next_norm);
    }
    (0..n).map(|i| x[(i, 0)]).collect()
}

/// Sample covariance (divisor `n - 1`) of row-major `rows × cols` data.
/// Returns the column means and the `cols × cols` covariance.
pub fn covariance(data: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mean = column_means(data, rows, cols);
    let x = Mat::from_fn(rows, cols, |i, j| data[i * cols + j] - mean[j]);
    let c = x.transpose() * &x;
    let denom = (rows.saturating_sub(1)).max(1) as f64;
    let mut cov = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            // Average the two triangles so the result is exactly symmetric.
            cov[i * cols + j] = 0.5 * (c[(i, j)] + c[(j, i)]) / denom;
        }
    }
    (mean, cov)
}

/// Gram matrix `X_c X_cᵀ / (n-1)` of the mean-centered rows.
pub fn centered_gram(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mean = column_means(data, rows, cols);
    let x = Mat::from_fn(rows, cols, |i, j| data[i * cols + j] - mean[j]);
    let g = &x * x.transpose();
    let denom = (rows.saturating_sub(1)).max(1) as f64;
    let mut out = vec![0.0; rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            out[i * rows + j] = 0.5 * (g[(i, j)] + g[(j, i)]) / denom;
        }
    }
    out
}

/// `Xᵀ X` (no centering) of row-major data.
pub fn cross_product(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let x = Mat::from_fn(rows, cols, |i, j| data[i * cols + j]);
    let c = x.transpose() * &x;
    let mut out = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            out[i * cols + j] = 0.5 * (c[(i, j)] + c[(j, i)]);
        }
    }
    out
}

/// `X Xᵀ` (no centering) of row-major data.
pub fn gram(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let x = Mat::from_fn(rows, cols, |i, j| data[i * cols + j]);
    let g = &x * x.transpose();
    let mut out = vec![0.0; rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            out[i * rows + j] = 0.5 * (g[(i, j)] + g[(j, i)]);
        }
    }
    out
}

pub fn column_means(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut mean = vec![0.0; cols];
    for r in data.chunks_exact(cols) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    mean
}

/// Ordinary least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}
