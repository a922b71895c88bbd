//! Dense matrix and scalar kernels shared by the fitting stages.
//!
//! Matrices are plain `DMatrix<f64>`; operations that expect symmetric
//! input symmetrize it first, so callers may pass nearly-symmetric results
//! of floating-point arithmetic without cleanup.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{GemError, Result};

/// Clamps `x` into `[lo, hi]`.
pub fn clip(x: f64, lo: f64, hi: f64) -> Result<f64> {
    if lo > hi {
        return Err(GemError::InvalidRange { lo, hi });
    }
    Ok(x.max(lo).min(hi))
}

/// Piecewise-linear curve through strictly increasing knots, extended by
/// constants outside the knot range.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpCurve {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl InterpCurve {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(GemError::InvalidInput(format!(
                "interpolation needs equal nonempty knot/value lengths, got {} and {}",
                knots.len(),
                values.len()
            )));
        }
        if knots.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(GemError::NonFinite("interpolation curve"));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GemError::InvalidInput(
                "interpolation knots must be strictly increasing".into(),
            ));
        }
        Ok(Self { knots, values })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, u: f64) -> f64 {
        let m = self.knots.len();
        if u <= self.knots[0] {
            return self.values[0];
        }
        if u >= self.knots[m - 1] {
            return self.values[m - 1];
        }
        // first knot >= u; interval is (knots[j-1], knots[j]]
        let j = self.knots.partition_point(|&k| k < u);
        let (u0, u1) = (self.knots[j - 1], self.knots[j]);
        let (v0, v1) = (self.values[j - 1], self.values[j]);
        v0 + (u - u0) / (u1 - u0) * (v1 - v0)
    }
}

pub fn lin_interp(curve: &InterpCurve, u: f64) -> f64 {
    curve.eval(u)
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn ensure_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(GemError::DimensionMismatch {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    Ok(())
}

fn ensure_finite(a: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GemError::NonFinite(what))
    }
}

/// Ordered eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted in decreasing order. Each eigenvector is signed so
/// that its largest-magnitude entry is positive (lowest index on ties).
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    /// Eigenvectors stored as columns, aligned with `values`.
    pub vectors: DMatrix<f64>,
}

impl Eigh {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        ensure_square(a)?;
        ensure_finite(a, "eigendecomposition input")?;
        let p = a.nrows();
        let eig = SymmetricEigen::new(symmetrize(a));
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = DMatrix::zeros(p, p);
        for (dst, &src) in order.iter().enumerate() {
            let col = eig.eigenvectors.column(src);
            let mut pivot = 0;
            for r in 1..p {
                if col[r].abs() > col[pivot].abs() {
                    pivot = r;
                }
            }
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            vectors.set_column(dst, &(col * sign));
        }
        Ok(Self { values, vectors })
    }

    /// `V diag(f(λ)) Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, &lam) in self.values.iter().enumerate() {
            let s = f(lam);
            scaled.column_mut(j).scale_mut(s);
        }
        let out = &scaled * self.vectors.transpose();
        symmetrize(&out)
    }

    /// Sum of the leading `m` eigen-components.
    pub fn leading_part(&self, m: usize) -> DMatrix<f64> {
        let p = self.vectors.nrows();
        let mut out = DMatrix::zeros(p, p);
        for j in 0..m {
            let v = self.vectors.column(j);
            out.ger(self.values[j], &v, &v, 1.0);
        }
        symmetrize(&out)
    }
}

/// Positive-definite projection: eigenvalues below `eps_pd` are raised to
/// `eps_pd`.
pub fn proj_pd(a: &DMatrix<f64>, eps_pd: f64) -> Result<DMatrix<f64>> {
    if !(eps_pd > 0.0) {
        return Err(GemError::InvalidInput("eps_pd must be positive".into()));
    }
    ensure_square(a)?;
    ensure_finite(a, "proj_pd input")?;
    let sym = symmetrize(a);
    // λ_min(A) > eps ⇔ A - eps I admits a Cholesky factor; the projection is
    // then the identity map.
    let mut shifted = sym.clone();
    for i in 0..sym.nrows() {
        shifted[(i, i)] -= eps_pd;
    }
    if shifted.cholesky().is_some() {
        return Ok(sym);
    }
    let eig = Eigh::new(&sym)?;
    Ok(eig.reconstruct_with(|l| l.max(eps_pd)))
}

/// `p A / tr(A)`.
pub fn trace_normalize(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(a)?;
    let tr = a.trace();
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(GemError::DegenerateTrace(tr));
    }
    Ok(a * (a.nrows() as f64 / tr))
}

fn soft(x: f64, lambda: f64) -> f64 {
    x.signum() * (x.abs() - lambda).max(0.0)
}

/// Soft-thresholds off-diagonal entries, leaving the diagonal untouched.
pub fn soft_threshold_offdiag(a: &DMatrix<f64>, lambda_u: f64) -> DMatrix<f64> {
    let mut out = a.clone();
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if i != j {
                out[(i, j)] = soft(a[(i, j)], lambda_u);
            }
        }
    }
    out
}

/// Symmetric square root of a positive semidefinite matrix.
pub fn symmetric_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = Eigh::new(a)?;
    let scale = eig.values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    if let Some(&bad) = eig.values.iter().find(|&&l| l < -1e-10 * scale) {
        return Err(GemError::NotPsd(bad));
    }
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()))
}

/// POET regularization: keep the top-`m` eigen-components, soft-threshold the
/// off-diagonal part of the remainder, add back, and project onto the
/// positive-definite cone.
pub fn poet(a: &DMatrix<f64>, m: usize, lambda_u: f64, eps_pd: f64) -> Result<DMatrix<f64>> {
    ensure_square(a)?;
    let p = a.nrows();
    if m > p {
        return Err(GemError::InvalidRank { rank: m, dim: p });
    }
    let sym = symmetrize(a);
    let low_rank = if m == 0 {
        DMatrix::zeros(p, p)
    } else {
        Eigh::new(&sym)?.leading_part(m)
    };
    let remainder = &sym - &low_rank;
    let combined = low_rank + soft_threshold_offdiag(&remainder, lambda_u);
    proj_pd(&combined, eps_pd)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky, falling
/// back to an eigendecomposition when the factorization fails.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(a)?;
    ensure_finite(a, "spd_inverse input")?;
    let sym = symmetrize(a);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(symmetrize(&chol.inverse()));
    }
    let eig = Eigh::new(&sym)?;
    if eig.values.iter().any(|&l| l <= 0.0) {
        return Err(GemError::NotPd);
    }
    Ok(eig.reconstruct_with(|l| 1.0 / l))
}

/// Log-determinant of a symmetric positive-definite matrix.
pub fn log_det_spd(a: &DMatrix<f64>) -> Result<f64> {
    let chol = symmetrize(a).cholesky().ok_or(GemError::NotPd)?;
    let l = chol.l_dirty();
    Ok(2.0 * (0..a.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// Largest absolute entry.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
