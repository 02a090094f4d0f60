//! Small numeric kernels shared across the crate: a dense Cholesky factor,
//! Gauss-Legendre quadrature, the bivariate edge-opening integral, and an
//! inverse normal CDF for confidence levels.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
}

/// In-place lower Cholesky factor of a row-major symmetric matrix.
pub fn cholesky_lower(a: &mut [f64], n: usize) -> Result<(), NumericError> {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(NumericError::NotPositiveDefinite { row: j, pivot: diag });
        }
        let d = diag.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in (j + 1)..n {
            a[j * n + k] = 0.0;
        }
    }
    Ok(())
}

/// y = L x for a lower-triangular row-major factor.
pub fn lower_triangular_apply(l: &[f64], n: usize, x: &[f64], y: &mut [f64]) {
    for i in 0..n {
        let mut s = 0.0;
        for k in 0..=i {
            s += l[i * n + k] * x[k];
        }
        y[i] = s;
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// E[ 1_{AB>0} (1 - e^{-kappa AB}) ] for a centred bivariate Gaussian (A, B)
/// with covariance [[c11, c12], [c12, c22]].
///
/// This is the probability that a cable edge with endpoint field values
/// (A, B) carries no zero. Composite Gauss-Legendre over the positive
/// quadrant (the opposite-sign quadrants contribute nothing, and the
/// same-sign quadrants are equal by symmetry).
pub fn edge_open_integral(c11: f64, c12: f64, c22: f64, kappa: f64) -> f64 {
    let det = c11 * c22 - c12 * c12;
    assert!(det > 0.0 && c11 > 0.0, "covariance must be positive definite");
    let norm = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
    let (nodes, weights) = gauss_legendre(24);
    // 10 standard deviations covers the quadrant to well below 1e-12.
    let la = 10.0 * c11.sqrt();
    let lb = 10.0 * c22.sqrt();
    let panels = 24;
    let mut total = 0.0;
    for pa in 0..panels {
        let a0 = la * pa as f64 / panels as f64;
        let a1 = la * (pa + 1) as f64 / panels as f64;
        let (am, ah) = (0.5 * (a0 + a1), 0.5 * (a1 - a0));
        for pb in 0..panels {
            let b0 = lb * pb as f64 / panels as f64;
            let b1 = lb * (pb + 1) as f64 / panels as f64;
            let (bm, bh) = (0.5 * (b0 + b1), 0.5 * (b1 - b0));
            let mut panel = 0.0;
            for (xi, wi) in nodes.iter().zip(&weights) {
                let a = am + ah * xi;
                for (xj, wj) in nodes.iter().zip(&weights) {
                    let b = bm + bh * xj;
                    let q = (c22 * a * a - 2.0 * c12 * a * b + c11 * b * b) / (2.0 * det);
                    let pdf = norm * (-q).exp();
                    panel += wi * wj * (1.0 - (-kappa * a * b).exp()) * pdf;
                }
            }
            total += panel * ah * bh;
        }
    }
    2.0 * total
}

/// Acklam's rational approximation of the standard normal quantile
/// (absolute error below 1.2e-9, ample for confidence-interval z values).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must be in (0,1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
