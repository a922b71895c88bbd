//! Natural cubic smoothing spline via the Reinsch algorithm.

use crate::error::{GemError, Result};

/// Fitted values and first derivatives of a smoothing spline at its knots.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFit {
    pub fitted: Vec<f64>,
    pub derivative: Vec<f64>,
}

/// Minimizes `Σ (v_m - f(y_m))² + lambda ∫ f''(t)² dt` over natural cubic
/// splines with knots at `y`.
///
/// With fewer than four knots the fit falls back to the least-squares line.
pub fn smoothing_spline(y: &[f64], v: &[f64], lambda: f64) -> Result<SplineFit> {
    let n = y.len();
    if n == 0 || n != v.len() {
        return Err(GemError::InvalidInput(format!(
            "spline needs matching nonempty inputs, got {} knots and {} values",
            n,
            v.len()
        )));
    }
    if y.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GemError::InvalidInput("spline knots must be strictly increasing".into()));
    }
    if y.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(GemError::NonFinite("spline input"));
    }
    if !(lambda > 0.0) {
        return Err(GemError::InvalidInput("spline penalty must be positive".into()));
    }
    if n < 4 {
        return Ok(linear_fit(y, v));
    }

    let h: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    let m = n - 2;
    // Column c of Q (interior knot c + 1) is nonzero in rows c, c+1, c+2.
    let q: Vec<[f64; 3]> = (0..m)
        .map(|c| [1.0 / h[c], -1.0 / h[c] - 1.0 / h[c + 1], 1.0 / h[c + 1]])
        .collect();

    // Banded R + λ QᵀQ: diagonal, first and second superdiagonals.
    let mut a0 = vec![0.0; m];
    let mut a1 = vec![0.0; m];
    let mut a2 = vec![0.0; m];
    for c in 0..m {
        a0[c] = (h[c] + h[c + 1]) / 3.0 + lambda * q[c].iter().map(|x| x * x).sum::<f64>();
        if c + 1 < m {
            a1[c] = h[c + 1] / 6.0 + lambda * (q[c][1] * q[c + 1][0] + q[c][2] * q[c + 1][1]);
        }
        if c + 2 < m {
            a2[c] = lambda * q[c][2] * q[c + 2][0];
        }
    }
    let rhs: Vec<f64> = (0..m)
        .map(|c| q[c][0] * v[c] + q[c][1] * v[c + 1] + q[c][2] * v[c + 2])
        .collect();
    let gamma_inner = solve_pentadiagonal(&a0, &a1, &a2, &rhs)?;

    let mut fitted = v.to_vec();
    for (c, g) in gamma_inner.iter().enumerate() {
        for (o, qv) in q[c].iter().enumerate() {
            fitted[c + o] -= lambda * qv * g;
        }
    }
    let mut gamma = vec![0.0; n];
    gamma[1..n - 1].copy_from_slice(&gamma_inner);

    let mut derivative = vec![0.0; n];
    for i in 0..n - 1 {
        derivative[i] = (fitted[i + 1] - fitted[i]) / h[i] - h[i] * (2.0 * gamma[i] + gamma[i + 1]) / 6.0;
    }
    let last = n - 2;
    derivative[n - 1] =
        (fitted[n - 1] - fitted[last]) / h[last] + h[last] * (gamma[last] + 2.0 * gamma[n - 1]) / 6.0;
    Ok(SplineFit { fitted, derivative })
}

fn linear_fit(y: &[f64], v: &[f64]) -> SplineFit {
    let n = y.len() as f64;
    let ym = y.iter().sum::<f64>() / n;
    let vm = v.iter().sum::<f64>() / n;
    let sxx: f64 = y.iter().map(|a| (a - ym).powi(2)).sum();
    let sxy: f64 = y.iter().zip(v).map(|(a, b)| (a - ym) * (b - vm)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    SplineFit {
        fitted: y.iter().map(|a| vm + slope * (a - ym)).collect(),
        derivative: vec![slope; y.len()],
    }
}

/// LDLᵀ solve of a symmetric positive-definite pentadiagonal system.
fn solve_pentadiagonal(a0: &[f64], a1: &[f64], a2: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let m = a0.len();
    let mut d = vec![0.0; m];
    let mut l1 = vec![0.0; m];
    let mut l2 = vec![0.0; m];
    for i in 0..m {
        let mut di = a0[i];
        if i >= 1 {
            di -= l1[i - 1] * l1[i - 1] * d[i - 1];
        }
        if i >= 2 {
            di -= l2[i - 2] * l2[i - 2] * d[i - 2];
        }
        if !(di > 0.0) {
            return Err(GemError::NotPd);
        }
        d[i] = di;
        let mut off = a1[i];
        if i >= 1 {
            off -= l2[i - 1] * l1[i - 1] * d[i - 1];
        }
        l1[i] = off / di;
        l2[i] = a2[i] / di;
    }
    let mut z = b.to_vec();
    for i in 0..m {
        if i >= 1 {
            z[i] -= l1[i - 1] * z[i - 1];
        }
        if i >= 2 {
            z[i] -= l2[i - 2] * z[i - 2];
        }
    }
    for i in 0..m {
        z[i] /= d[i];
    }
    for i in (0..m).rev() {
        if i + 1 < m {
            z[i] -= l1[i] * z[i + 1];
        }
        if i + 2 < m {
            z[i] -= l2[i] * z[i + 2];
        }
    }
    Ok(z)
}
