//! Small dense linear-algebra kernels used across the toolkit.
//!
//! Everything here targets the modest matrix sizes of this crate (latent
//! dimensions of a few dozen), so the implementations favour clarity and
//! determinism over asymptotics.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Spectral norm (largest singular value) via power iteration on `AᵀA`.
///
/// Deterministic start vector; iterates until the estimate is stable to
/// ~1e-13 relative or an iteration cap is hit.
pub fn spectral_norm(a: &ArrayView2<f64>) -> f64 {
    let (rows, cols) = a.dim();
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    // Mildly uneven start so it is never orthogonal to the dominant direction
    // for structured matrices (e.g. permutations).
    let mut v = Array1::from_shape_fn(cols, |i| 1.0 + 0.01 * (i as f64 + 1.0));
    let norm_v = norm2(&v.view());
    v.mapv_inplace(|x| x / norm_v);

    let mut sigma = 0.0_f64;
    for _ in 0..1000 {
        let av = a.dot(&v);
        let new_sigma = norm2(&av.view());
        if new_sigma == 0.0 {
            return 0.0;
        }
        let atav = a.t().dot(&av);
        let n = norm2(&atav.view());
        if n == 0.0 {
            return new_sigma;
        }
        v = atav / n;
        if (new_sigma - sigma).abs() <= 1e-13 * new_sigma.max(1.0) {
            return new_sigma;
        }
        sigma = new_sigma;
    }
    sigma
}

/// Euclidean norm of a vector.
pub fn norm2(v: &ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Frobenius norm of a matrix.
pub fn frobenius_norm(a: &ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Householder QR of a square matrix, normalized so diag(R) >= 0.
///
/// Returns (Q, R) with A = Q R, Q orthogonal, R upper triangular.
pub fn qr(a: &ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "qr expects a square matrix");
    let mut r = a.to_owned();
    let mut q = Array2::<f64>::eye(n);

    for k in 0..n {
        // Householder vector for column k below the diagonal.
        let mut alpha = 0.0;
        for i in k..n {
            alpha += r[[i, k]] * r[[i, k]];
        }
        alpha = alpha.sqrt();
        if alpha == 0.0 {
            continue;
        }
        if r[[k, k]] > 0.0 {
            alpha = -alpha;
        }
        let mut v = vec![0.0; n - k];
        v[0] = r[[k, k]] - alpha;
        for i in k + 1..n {
            v[i - k] = r[[i, k]];
        }
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // Apply H = I - 2vvᵀ/|v|² to R (left) and accumulate into Q (right).
        for j in k..n {
            let mut dot = 0.0;
            for i in k..n {
                dot += v[i - k] * r[[i, j]];
            }
            let scale = 2.0 * dot / vnorm2;
            for i in k..n {
                r[[i, j]] -= scale * v[i - k];
            }
        }
        for i in 0..n {
            let mut dot = 0.0;
            for j in k..n {
                dot += q[[i, j]] * v[j - k];
            }
            let scale = 2.0 * dot / vnorm2;
            for j in k..n {
                q[[i, j]] -= scale * v[j - k];
            }
        }
    }

    // Zero the strict lower triangle (roundoff) and sign-normalize.
    for i in 0..n {
        for j in 0..i {
            r[[i, j]] = 0.0;
        }
    }
    for i in 0..n {
        if r[[i, i]] < 0.0 {
            for j in 0..n {
                r[[i, j]] = -r[[i, j]];
                q[[j, i]] = -q[[j, i]];
            }
        }
    }
    (q, r)
}

/// Cholesky factor L (lower triangular) of a symmetric positive definite
/// matrix, `A = L Lᵀ`. Fails with a singular-matrix error when a pivot is
/// not strictly positive.
pub fn cholesky(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Shape(format!(
            "cholesky expects a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Singular(format!(
                        "non-positive pivot {sum:e} at row {i} during Cholesky factorization"
                    )));
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve `L Lᵀ x = b` given the Cholesky factor L.
pub fn cholesky_solve(l: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Ordinary least-squares line fit. Returns (slope, intercept, r²).
///
/// r² is clamped to [0, 1]; a perfectly flat target (zero variance) is
/// reported as r² = 0 unless the residuals are also zero.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.len() < 2 {
        return (0.0, y.first().copied().unwrap_or(0.0), 0.0);
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return (0.0, my, 0.0);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn qr_reconstructs_and_is_orthogonal() {
        let a = array![[2.0, -1.0, 0.5], [1.0, 3.0, -2.0], [0.0, 1.5, 1.0]];
        let (q, r) = qr(&a.view());
        let qr_prod = q.dot(&r);
        for (x, y) in a.iter().zip(qr_prod.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        let qtq = q.t().dot(&q);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(qtq[[i, j]], expect, epsilon = 1e-12);
            }
        }
        for i in 0..3 {
            assert!(r[[i, i]] >= 0.0);
            for j in 0..i {
                assert_eq!(r[[i, j]], 0.0);
            }
        }
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = array![[3.0, 0.0], [0.0, -7.0]];
        assert_abs_diff_eq!(spectral_norm(&a.view()), 7.0, epsilon = 1e-10);
    }

    #[test]
    fn spectral_norm_of_orthogonal_is_one() {
        let c = (0.7_f64).cos();
        let s = (0.7_f64).sin();
        let a = array![[c, -s], [s, c]];
        assert_abs_diff_eq!(spectral_norm(&a.view()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = array![[4.0, 1.0, 0.0], [1.0, 3.0, -1.0], [0.0, -1.0, 2.0]];
        let b = array![1.0, -2.0, 3.0];
        let l = cholesky(&a.view()).unwrap();
        let x = cholesky_solve(&l.view(), &b.view());
        let ax = a.dot(&x);
        for (u, v) in ax.iter().zip(b.iter()) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_singular() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(cholesky(&a.view()).is_err());
    }

    #[test]
    fn linear_fit_exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        let (slope, intercept, r2) = linear_fit(&x, &y);
        assert_abs_diff_eq!(slope, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(intercept, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r2, 1.0, epsilon = 1e-12);
    }
}
