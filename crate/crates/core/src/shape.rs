//! Common-precision block: spatial-sign pilot, factor count, POET, weighted
//! Tyler scatter, graphical lasso with EBIC selection and the damped update.

use nalgebra::DMatrix;

use crate::config::ShapeConfig;
use crate::error::{GemError, Result};
use crate::generator::effective_sample_size;
use crate::matrix_ops::{log_det_spd, poet, proj_pd, spd_inverse, symmetrize, trace_normalize, Eigh};
use crate::responsibilities::Responsibilities;

/// Residual rows stacked over (observation, component) with their weights.
///
/// Row `i * K + k` of the input holds `x_i - mu_k`. Rows whose weight is
/// zero are dropped since they contribute nothing to any weighted sum.
#[derive(Debug, Clone)]
pub struct WeightedResiduals {
    rows: DMatrix<f64>,
    weights: Vec<f64>,
    total: f64,
}

impl WeightedResiduals {
    pub fn new(residuals: &DMatrix<f64>, resp: &Responsibilities) -> Result<Self> {
        let (n, k) = (resp.n(), resp.k());
        if residuals.nrows() != n * k {
            return Err(GemError::DimensionMismatch {
                expected: n * k,
                found: residuals.nrows(),
            });
        }
        if residuals.iter().any(|v| !v.is_finite()) {
            return Err(GemError::NonFinite("residuals"));
        }
        let mut keep = Vec::new();
        let mut weights = Vec::new();
        for i in 0..n {
            for c in 0..k {
                let t = resp.get(i, c);
                if t > 0.0 {
                    keep.push(i * k + c);
                    weights.push(t);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        if keep.is_empty() || !(total > 0.0) {
            return Err(GemError::DegenerateWeights);
        }
        let rows = residuals.select_rows(keep.iter());
        Ok(Self { rows, weights, total })
    }

    /// Residuals `x_i - mu_k` for every pair, stacked as described above.
    pub fn from_centers(x: &DMatrix<f64>, centers: &DMatrix<f64>, resp: &Responsibilities) -> Result<Self> {
        Self::new(&stack_residuals(x, centers)?, resp)
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ w_r r rᵀ c_r`, computed as one matrix product.
    fn weighted_outer(&self, coef: &[f64]) -> DMatrix<f64> {
        let mut scaled = self.rows.clone();
        for (r, &c) in coef.iter().enumerate() {
            scaled.row_mut(r).scale_mut(c.sqrt());
        }
        symmetrize(&(scaled.transpose() * &scaled))
    }
}

/// (n·K)×p matrix whose row `i * K + k` is `x_i - mu_k`.
pub fn stack_residuals(x: &DMatrix<f64>, centers: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != centers.ncols() {
        return Err(GemError::DimensionMismatch {
            expected: x.ncols(),
            found: centers.ncols(),
        });
    }
    let (n, k, p) = (x.nrows(), centers.nrows(), x.ncols());
    Ok(DMatrix::from_fn(n * k, p, |r, j| x[(r / k, j)] - centers[(r % k, j)]))
}

/// Weighted spatial-sign matrix of the residuals.
pub fn spatial_sign_pilot(res: &WeightedResiduals, eps_r: f64) -> DMatrix<f64> {
    let coef: Vec<f64> = res
        .rows
        .row_iter()
        .zip(&res.weights)
        .map(|(r, w)| w / r.norm_squared().max(eps_r) / res.total)
        .collect();
    res.weighted_outer(&coef)
}

/// Eigenvalue-ratio statistics `GR_j` for `j = 1..=min(m_kr, p - 2)`.
///
/// Entries are `None` where a tail sum is nonpositive or the ratio is not
/// finite. `values` must be sorted in decreasing order.
pub fn eigen_ratios(values: &[f64], m_kr: usize) -> Vec<Option<f64>> {
    let p = values.len();
    if p < 3 {
        return Vec::new();
    }
    let jmax = m_kr.min(p - 2);
    // tail[j] = d_j + ... + d_{p-1} in one-based terms
    let mut tail = vec![0.0; p + 1];
    for j in (1..p).rev() {
        tail[j] = tail[j + 1] + values[j - 1];
    }
    (1..=jmax)
        .map(|j| {
            let (vj, vn) = (tail[j], tail[j + 1]);
            if !(vj > 0.0) || !(vn > 0.0) {
                return None;
            }
            let gr = (values[j - 1] / vj).ln_1p() / (values[j] / vn).ln_1p();
            gr.is_finite().then_some(gr)
        })
        .collect()
}

/// Factor count maximizing the eigenvalue ratio, smallest on ties; zero
/// when no ratio is usable.
pub fn select_factor_count_from_values(values: &[f64], m_kr: usize) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (idx, gr) in eigen_ratios(values, m_kr).into_iter().enumerate() {
        if let Some(g) = gr {
            if best.is_none_or(|(_, b)| g > b) {
                best = Some((idx + 1, g));
            }
        }
    }
    best.map_or(0, |(j, _)| j)
}

pub fn select_factor_count(h: &DMatrix<f64>, m_kr: usize) -> Result<usize> {
    if h.nrows() < 3 {
        return Ok(0);
    }
    Ok(select_factor_count_from_values(&Eigh::new(h)?.values, m_kr))
}

/// Output of the weighted Tyler iteration.
#[derive(Debug, Clone)]
pub struct TylerFit {
    pub scatter: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// One application of the ridge-regularized Tyler map.
pub fn tyler_step(res: &WeightedResiduals, sigma: &DMatrix<f64>, cfg: &ShapeConfig) -> Result<DMatrix<f64>> {
    let p = res.dim();
    let omega = spd_inverse(sigma)?;
    let projected = &res.rows * &omega;
    let m = res.len();
    let mut quad = vec![0.0; m];
    for (a, b) in res.rows.as_slice().chunks_exact(m).zip(projected.as_slice().chunks_exact(m)) {
        for ((q, x), y) in quad.iter_mut().zip(a).zip(b) {
            *q += x * y;
        }
    }
    let scale = p as f64 / res.total;
    let coef: Vec<f64> = quad
        .iter()
        .zip(&res.weights)
        .map(|(q, w)| scale * w / q.max(cfg.eps_r))
        .collect();
    let mut blend = res.weighted_outer(&coef) * (1.0 - cfg.rho_t);
    for i in 0..p {
        blend[(i, i)] += cfg.rho_t;
    }
    proj_pd(&trace_normalize(&blend)?, cfg.eps_pd)
}

/// Iterates the Tyler map from `init` until the relative Frobenius change
/// drops below `tyler_tol`.
pub fn tyler_scatter(res: &WeightedResiduals, init: &DMatrix<f64>, cfg: &ShapeConfig) -> Result<TylerFit> {
    let mut sigma = init.clone();
    for it in 1..=cfg.tyler_max_iter {
        let next = tyler_step(res, &sigma, cfg)?;
        let change = (&next - &sigma).norm() / sigma.norm();
        sigma = next;
        if change <= cfg.tyler_tol {
            return Ok(TylerFit {
                scatter: sigma,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(TylerFit {
        scatter: sigma,
        iterations: cfg.tyler_max_iter,
        converged: false,
    })
}

fn soft(x: f64, lambda: f64) -> f64 {
    x.signum() * (x.abs() - lambda).max(0.0)
}

/// Largest violation of the optimality conditions of
/// `tr(SΩ) - log det Ω + lambda Σ_{a≠b} |Ω_ab|`.
pub fn glasso_kkt_violation(s: &DMatrix<f64>, omega: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    let w = spd_inverse(omega)?;
    let p = s.nrows();
    let mut worst = 0.0_f64;
    for a in 0..p {
        worst = worst.max((w[(a, a)] - s[(a, a)]).abs());
        for b in 0..p {
            if a == b {
                continue;
            }
            let g = w[(a, b)] - s[(a, b)];
            let v = if omega[(a, b)].abs() > 1e-8 {
                (g - lambda * omega[(a, b)].signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            };
            worst = worst.max(v);
        }
    }
    Ok(worst)
}

const LASSO_MAX_PASSES: usize = 1000;

/// Working covariance and lasso coefficients, reusable as a warm start for
/// a nearby penalty.
#[derive(Debug, Clone)]
pub struct GlassoState {
    w: DMatrix<f64>,
    /// Column j holds the lasso coefficients of block j (entry j unused).
    beta: DMatrix<f64>,
}

/// Graphical lasso with an unpenalized diagonal, by block coordinate descent
/// on the working covariance.
///
/// Stops once the mean absolute change of the working covariance is at most
/// `tol` times the mean absolute off-diagonal of `s` and the optimality
/// conditions hold to within `tol`.
pub fn glasso_solve(s: &DMatrix<f64>, lambda: f64, tol: f64, max_iter: usize) -> Result<DMatrix<f64>> {
    glasso_warm(s, lambda, tol, max_iter, None).map(|(omega, _)| omega)
}

/// As [`glasso_solve`], optionally starting from the state of an earlier
/// solve on the same `s`; also returns the final state.
pub fn glasso_warm(
    s: &DMatrix<f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
    warm: Option<GlassoState>,
) -> Result<(DMatrix<f64>, GlassoState)> {
    if s.nrows() != s.ncols() {
        return Err(GemError::DimensionMismatch {
            expected: s.nrows(),
            found: s.ncols(),
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(GemError::InvalidInput("glasso penalty must be finite and nonnegative".into()));
    }
    let s = symmetrize(s);
    if s.clone().cholesky().is_none() {
        return Err(GemError::NotPd);
    }
    let p = s.nrows();
    if p == 1 {
        let state = GlassoState {
            w: s.clone(),
            beta: DMatrix::zeros(1, 1),
        };
        return Ok((DMatrix::from_element(1, 1, 1.0 / s[(0, 0)]), state));
    }
    let off_count = (p * (p - 1)) as f64;
    let mut off_mean = 0.0;
    for a in 0..p {
        for b in 0..p {
            if a != b {
                off_mean += s[(a, b)].abs();
            }
        }
    }
    off_mean /= off_count;
    let target = tol * off_mean;
    let inner_tol = (0.1 * target).max(1e-15);

    let GlassoState { mut w, mut beta } = match warm {
        Some(st) if st.w.shape() == (p, p) => st,
        _ => GlassoState {
            w: s.clone(),
            beta: DMatrix::zeros(p, p),
        },
    };
    let mut wb = vec![0.0; p];
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        let mut total_change = 0.0;
        for j in 0..p {
            wb.iter_mut().for_each(|v| *v = 0.0);
            for m in 0..p {
                let b = beta[(m, j)];
                if m != j && b != 0.0 {
                    for (v, wm) in wb.iter_mut().zip(w.column(m).iter()) {
                        *v += wm * b;
                    }
                }
            }
            lasso_block(&s, &w, &mut beta, &mut wb, j, lambda, inner_tol);
            for l in 0..p {
                if l != j {
                    total_change += 2.0 * (wb[l] - w[(l, j)]).abs();
                    w[(l, j)] = wb[l];
                    w[(j, l)] = wb[l];
                }
            }
        }
        change = total_change / off_count;
        if change <= target {
            let omega = precision_from_blocks(&w, &beta);
            if let Ok(v) = glasso_kkt_violation(&s, &omega, lambda) {
                if v <= tol {
                    return Ok((omega, GlassoState { w, beta }));
                }
            }
        }
    }
    Err(GemError::NonConvergence {
        iterations: max_iter,
        last_change: change,
        target,
    })
}

/// Coordinate descent for block `j`: minimizes
/// `½ βᵀ W₁₁ β - βᵀ s₁₂ + lambda ‖β‖₁` while keeping `wb = W₁₁ β` current.
/// Full passes alternate with passes over the nonzero coefficients only.
fn lasso_block(
    s: &DMatrix<f64>,
    w: &DMatrix<f64>,
    beta: &mut DMatrix<f64>,
    wb: &mut [f64],
    j: usize,
    lambda: f64,
    tol: f64,
) {
    let p = s.nrows();
    let ws = w.as_slice();
    let sj = &s.as_slice()[j * p..(j + 1) * p];
    let bj = &mut beta.as_mut_slice()[j * p..(j + 1) * p];
    let update = |l: usize, bj: &mut [f64], wb: &mut [f64]| -> f64 {
        let old = bj[l];
        let wl = &ws[l * p..(l + 1) * p];
        let wll = wl[l];
        let r = sj[l] - (wb[l] - wll * old);
        let new = soft(r, lambda) / wll;
        let delta = new - old;
        if delta == 0.0 {
            return 0.0;
        }
        bj[l] = new;
        for (v, wm) in wb.iter_mut().zip(wl) {
            *v += wm * delta;
        }
        delta.abs() * wll.sqrt()
    };
    let mut active = Vec::with_capacity(p);
    for _ in 0..LASSO_MAX_PASSES {
        let mut max_delta = 0.0_f64;
        for l in (0..p).filter(|&l| l != j) {
            max_delta = max_delta.max(update(l, bj, wb));
        }
        if max_delta <= tol {
            return;
        }
        active.clear();
        active.extend((0..p).filter(|&l| l != j && bj[l] != 0.0));
        for _ in 0..LASSO_MAX_PASSES {
            let mut inner = 0.0_f64;
            for &l in &active {
                inner = inner.max(update(l, bj, wb));
            }
            if inner <= tol {
                break;
            }
        }
    }
}

fn precision_from_blocks(w: &DMatrix<f64>, beta: &DMatrix<f64>) -> DMatrix<f64> {
    let p = w.nrows();
    let mut omega = DMatrix::zeros(p, p);
    for j in 0..p {
        let w12b: f64 = (0..p).filter(|&l| l != j).map(|l| w[(l, j)] * beta[(l, j)]).sum();
        let ojj = 1.0 / (w[(j, j)] - w12b);
        omega[(j, j)] = ojj;
        for l in 0..p {
            if l != j {
                omega[(l, j)] = -beta[(l, j)] * ojj;
            }
        }
    }
    symmetrize(&omega)
}

/// Number of strictly upper-triangular entries with magnitude above `1e-8`.
pub fn edge_count(omega: &DMatrix<f64>) -> usize {
    let p = omega.nrows();
    (0..p)
        .flat_map(|b| (0..b).map(move |a| (a, b)))
        .filter(|&(a, b)| omega[(a, b)].abs() > 1e-8)
        .count()
}

/// Gaussian profile log-likelihood per observation, constants dropped.
pub fn gaussian_profile_loglik(s: &DMatrix<f64>, omega: &DMatrix<f64>) -> Result<f64> {
    Ok(0.5 * (log_det_spd(omega)? - (s * omega).trace()))
}

pub fn ebic(s: &DMatrix<f64>, omega: &DMatrix<f64>, n_eff: f64, gamma: f64) -> Result<f64> {
    let p = s.nrows() as f64;
    let df = edge_count(omega) as f64;
    Ok(-n_eff * gaussian_profile_loglik(s, omega)? + n_eff.ln() * df + 4.0 * gamma * p.ln() * df)
}

/// Selected precision proposal and the penalty that produced it.
#[derive(Debug, Clone)]
pub struct EbicSelection {
    pub omega: DMatrix<f64>,
    pub lambda: f64,
    pub ebic: f64,
}

/// Solves the graphical lasso on the grid `c_omega √(log p / n_eff)` times
/// each multiplier and returns the EBIC minimizer (larger penalty on ties).
pub fn ebic_select_precision(s_pt: &DMatrix<f64>, n_eff: f64, cfg: &ShapeConfig) -> Result<EbicSelection> {
    if !(n_eff > 0.0) {
        return Err(GemError::DegenerateWeights);
    }
    let p = s_pt.nrows() as f64;
    let base = cfg.c_omega * (p.ln() / n_eff).sqrt();
    // largest penalty first; each solve warm-starts the next
    let mut lambdas: Vec<f64> = cfg.lambda_multipliers.iter().map(|m| base * m).collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    let mut warm = None;
    let mut fits: Vec<(f64, Result<(DMatrix<f64>, f64)>)> = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let fit = match glasso_warm(s_pt, lambda, cfg.glasso_tol, cfg.glasso_max_iter, warm.take()) {
            Ok((omega, state)) => {
                warm = Some(state);
                ebic(s_pt, &omega, n_eff, cfg.gamma_ebic).map(|e| (omega, e))
            }
            Err(e) => Err(e),
        };
        fits.push((lambda, fit));
    }
    let mut best: Option<EbicSelection> = None;
    let mut last_err = None;
    for (lambda, fit) in fits {
        match fit {
            Ok((omega, e)) => {
                let replace = match &best {
                    None => true,
                    Some(b) => {
                        let slack = 1e-12 * e.abs().max(b.ebic.abs()).max(1.0);
                        e < b.ebic - slack || ((e - b.ebic).abs() <= slack && lambda > b.lambda)
                    }
                };
                if replace {
                    best = Some(EbicSelection { omega, lambda, ebic: e });
                }
            }
            Err(err) => last_err = Some(err),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(GemError::InvalidInput("empty penalty grid".into())))
}

/// Damped, trace-normalized precision update. Returns `(Omega, Sigma)`.
pub fn update_precision(
    omega_prev: &DMatrix<f64>,
    omega_prop: &DMatrix<f64>,
    cfg: &ShapeConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eta = cfg.eta_omega;
    let half = proj_pd(&(omega_prev * (1.0 - eta) + omega_prop * eta), cfg.eps_pd)?;
    let sigma = trace_normalize(&proj_pd(&spd_inverse(&half)?, cfg.eps_pd)?)?;
    let omega = proj_pd(&spd_inverse(&sigma)?, cfg.eps_pd)?;
    Ok((omega, sigma))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDiagnostics {
    pub factor_count: usize,
    pub lambda_u: f64,
    pub lambda_omega: f64,
    pub tyler_iterations: usize,
    pub tyler_converged: bool,
}

#[derive(Debug, Clone)]
pub struct ShapeUpdate {
    pub omega: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub diagnostics: ShapeDiagnostics,
}

/// Full common-precision update from stacked residuals.
pub fn shape_block(
    residuals: &DMatrix<f64>,
    resp: &Responsibilities,
    omega_prev: &DMatrix<f64>,
    cfg: &ShapeConfig,
) -> Result<ShapeUpdate> {
    let res = WeightedResiduals::new(residuals, resp)?;
    let p = res.dim();
    if omega_prev.nrows() != p {
        return Err(GemError::DimensionMismatch {
            expected: p,
            found: omega_prev.nrows(),
        });
    }
    let n_eff = effective_sample_size(resp);
    let pilot = spatial_sign_pilot(&res, cfg.eps_r);
    let m = select_factor_count(&pilot, cfg.m_kr)?;
    let lambda_u = cfg.c_u * ((p as f64).ln() / n_eff).sqrt();
    let pss = poet(&pilot, m, lambda_u, cfg.eps_pd)?;
    let init = trace_normalize(&proj_pd(&pss, cfg.eps_pd)?)?;
    let tyler = tyler_scatter(&res, &init, cfg)?;
    let pt = poet(&tyler.scatter, m, lambda_u, cfg.eps_pd)?;
    let sel = ebic_select_precision(&pt, n_eff, cfg)?;
    let (omega, sigma) = update_precision(omega_prev, &sel.omega, cfg)?;
    Ok(ShapeUpdate {
        omega,
        sigma,
        diagnostics: ShapeDiagnostics {
            factor_count: m,
            lambda_u,
            lambda_omega: sel.lambda,
            tyler_iterations: tyler.iterations,
            tyler_converged: tyler.converged,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hard(n: usize) -> Responsibilities {
        Responsibilities::from_labels(&vec![0; n], 1).unwrap()
    }

    fn weighted(rows: &[&[f64]], w: &[f64]) -> WeightedResiduals {
        let p = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let m = DMatrix::from_row_slice(rows.len(), p, &flat);
        let resp = Responsibilities::new(DMatrix::from_column_slice(w.len(), 1, &vec![1.0; w.len()])).unwrap();
        let mut out = WeightedResiduals::new(&m, &resp).unwrap();
        out.total = w.iter().sum();
        out.weights = w.to_vec();
        out
    }

    fn random_spd(p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(p, p + 3, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() / (p as f64) + DMatrix::identity(p, p) * 0.2
    }

    #[test]
    fn pilot_of_opposite_vectors() {
        let r = weighted(&[&[1.0, 0.0], &[-1.0, 0.0]], &[0.5, 0.5]);
        let h = spatial_sign_pilot(&r, 1e-10);
        assert_relative_eq!(h, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn pilot_of_orthonormal_vectors() {
        let r = weighted(&[&[3.0, 0.0], &[0.0, -0.2]], &[0.5, 0.5]);
        let h = spatial_sign_pilot(&r, 1e-10);
        assert_relative_eq!(h, DMatrix::from_diagonal_element(2, 2, 0.5), epsilon = 1e-15);
    }

    #[test]
    fn zero_weight_rows_are_dropped() {
        let resp = Responsibilities::from_labels(&[1, 1], 2).unwrap();
        let r = WeightedResiduals::new(&DMatrix::zeros(4, 3), &resp).unwrap();
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn no_weight_is_degenerate() {
        let empty = Responsibilities::from_labels(&[], 1).unwrap();
        let r = WeightedResiduals::from_centers(&DMatrix::zeros(0, 3), &DMatrix::zeros(1, 3), &empty);
        assert!(matches!(r, Err(GemError::DegenerateWeights)));
    }

    proptest! {
        #[test]
        fn pilot_has_unit_trace(seed in 0u64..500, n in 2usize..20, p in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let resp = Responsibilities::from_labels(&labels, 2).unwrap();
            let centers = DMatrix::from_fn(2, p, |_, _| rng.random_range(-0.5..0.5));
            let r = WeightedResiduals::from_centers(&x, &centers, &resp).unwrap();
            let h = spatial_sign_pilot(&r, 1e-10);
            prop_assert!((h.trace() - 1.0).abs() < 1e-12);
        }
    }

    fn brute_force_ratios(d: &[f64], m_kr: usize) -> Vec<Option<f64>> {
        let p = d.len();
        let v = |j: usize| -> f64 { (j..=p - 1).map(|l| d[l - 1]).sum() };
        (1..=m_kr.min(p - 2))
            .map(|j| {
                let (a, b) = (v(j), v(j + 1));
                if a <= 0.0 || b <= 0.0 {
                    return None;
                }
                let g = (1.0 + d[j - 1] / a).ln() / (1.0 + d[j] / b).ln();
                g.is_finite().then_some(g)
            })
            .collect()
    }

    #[test]
    fn one_dominant_eigenvalue() {
        let gr = eigen_ratios(&[10.0, 1.0, 1.0, 1.0], 8);
        assert_eq!(gr.len(), 2);
        assert!((gr[0].unwrap() - 1.495).abs() < 1e-3);
        assert!((gr[1].unwrap() - 0.585).abs() < 1e-3);
        assert_eq!(select_factor_count_from_values(&[10.0, 1.0, 1.0, 1.0], 8), 1);
        let h = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 10.0, 1.0, 1.0]));
        assert_eq!(select_factor_count(&h, 8).unwrap(), 1);
    }

    #[test]
    fn equal_eigenvalues_match_brute_force() {
        let d = vec![2.0; 7];
        let gr = eigen_ratios(&d, 8);
        let slow = brute_force_ratios(&d, 8);
        assert_eq!(gr.len(), slow.len());
        for (a, b) in gr.iter().zip(&slow) {
            assert!((a.unwrap() - b.unwrap()).abs() < 1e-12);
        }
        let arg = gr
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bj, bg), (i, g)| match g {
                Some(g) if *g > bg => (i + 1, *g),
                _ => (bj, bg),
            })
            .0;
        assert_eq!(select_factor_count_from_values(&d, 8), arg);
    }

    #[test]
    fn three_dimensions_search_only_one() {
        assert_eq!(eigen_ratios(&[3.0, 2.0, 1.0], 8).len(), 1);
        assert_eq!(select_factor_count_from_values(&[3.0, 2.0, 1.0], 8), 1);
    }

    #[test]
    fn unusable_ratios_give_zero() {
        assert_eq!(select_factor_count_from_values(&[1.0, 0.0, 0.0, 0.0], 8), 0);
        assert_eq!(select_factor_count_from_values(&[1.0, 1.0], 8), 0);
    }

    proptest! {
        #[test]
        fn ratios_match_brute_force(mut d in prop::collection::vec(0.01f64..10.0, 3..12), m_kr in 1usize..10) {
            d.sort_by(|a, b| b.total_cmp(a));
            let fast = eigen_ratios(&d, m_kr);
            let slow = brute_force_ratios(&d, m_kr);
            prop_assert_eq!(fast.len(), slow.len());
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a.unwrap() - b.unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tyler_identity_fixed_point() {
        let r = weighted(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]], &[0.25; 4]);
        let cfg = ShapeConfig::default();
        let fit = tyler_scatter(&r, &DMatrix::identity(2, 2), &cfg).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.scatter, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_relative_eq!(tyler_step(&r, &DMatrix::identity(2, 2), &cfg).unwrap(), DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn tyler_collinear_stays_pd() {
        let rows: Vec<Vec<f64>> = (1..=10).map(|i| vec![i as f64 * if i % 2 == 0 { 1.0 } else { -1.0 }, 0.0, 0.0]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let r = weighted(&refs, &[0.1; 10]);
        let cfg = ShapeConfig::default();
        let fit = tyler_scatter(&r, &DMatrix::identity(3, 3), &cfg).unwrap();
        let eig = Eigh::new(&fit.scatter).unwrap();
        // at the fixed point the raw Tyler part is diag(3a, 0, 0), so the
        // orthogonal directions keep only the normalized ridge
        let a = fit.scatter[(0, 0)];
        let floor = 3.0 * cfg.rho_t / ((1.0 - cfg.rho_t) * 3.0 * a + 3.0 * cfg.rho_t);
        assert!(floor > 0.0);
        assert!((eig.values[2] - floor).abs() < 1e-6, "{:?} vs {floor}", eig.values);
        assert!((fit.scatter.trace() - 3.0).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn tyler_output_is_a_fixed_point(seed in 0u64..1000, p in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 40;
            let x = DMatrix::from_fn(n, p, |_, j| rng.random_range(-1.0..1.0) * (1.0 + j as f64));
            let r = WeightedResiduals::new(&x, &hard(n)).unwrap();
            let cfg = ShapeConfig::default();
            let fit = tyler_scatter(&r, &DMatrix::identity(p, p), &cfg).unwrap();
            prop_assert!((fit.scatter.trace() - p as f64).abs() < 1e-10);
            prop_assert!(fit.scatter.clone().cholesky().is_some());
            if fit.converged {
                let again = tyler_step(&r, &fit.scatter, &cfg).unwrap();
                let resid = (&fit.scatter - again).norm() / fit.scatter.norm();
                prop_assert!(resid <= 10.0 * cfg.tyler_tol);
            }
        }
    }

    #[test]
    fn glasso_without_penalty_inverts() {
        let s = random_spd(6, 3);
        let omega = glasso_solve(&s, 0.0, 1e-10, 500).unwrap();
        assert_relative_eq!(omega, spd_inverse(&s).unwrap(), epsilon = 1e-8);
    }

    #[test]
    fn glasso_large_penalty_is_diagonal() {
        let s = random_spd(5, 11);
        let lam = (0..5)
            .flat_map(|a| (0..5).map(move |b| (a, b)))
            .filter(|(a, b)| a != b)
            .map(|(a, b)| s[(a, b)].abs())
            .fold(0.0, f64::max);
        let omega = glasso_solve(&s, lam, 1e-8, 100).unwrap();
        let expected = DMatrix::from_fn(5, 5, |a, b| if a == b { 1.0 / s[(a, a)] } else { 0.0 });
        assert_relative_eq!(omega, expected, epsilon = 1e-12);
    }

    #[test]
    fn glasso_two_by_two() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let omega = glasso_solve(&s, 0.1, 1e-8, 100).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0 / 0.84, -0.4 / 0.84, -0.4 / 0.84, 1.0 / 0.84]);
        assert_relative_eq!(omega, expected, epsilon = 1e-8);
        assert!((omega[(0, 0)] - 1.19048).abs() < 1e-5);
        assert!((omega[(0, 1)] + 0.47619).abs() < 1e-5);
    }

    #[test]
    fn glasso_rejects_indefinite_input() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(glasso_solve(&s, 0.1, 1e-4, 100), Err(GemError::NotPd)));
    }

    #[test]
    fn glasso_reports_non_convergence() {
        let s = random_spd(12, 5);
        match glasso_solve(&s, 0.01, 1e-14, 1) {
            Err(GemError::NonConvergence { iterations, .. }) => assert_eq!(iterations, 1),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn glasso_certificate_holds(seed in 0u64..10_000, p in 2usize..9, lam in 0.0f64..0.3) {
            let s = random_spd(p, seed);
            let tol = 1e-6;
            let omega = glasso_solve(&s, lam, tol, 500).unwrap();
            prop_assert!(omega.clone().cholesky().is_some());
            prop_assert!(glasso_kkt_violation(&s, &omega, lam).unwrap() <= tol);
        }
    }

    #[test]
    fn single_multiplier_grid() {
        let cfg = ShapeConfig {
            lambda_multipliers: vec![2.0],
            ..ShapeConfig::default()
        };
        let sel = ebic_select_precision(&random_spd(4, 1), 100.0, &cfg).unwrap();
        let base = 0.5 * (4.0_f64.ln() / 100.0).sqrt();
        assert_relative_eq!(sel.lambda, 2.0 * base, epsilon = 1e-15);
    }

    #[test]
    fn diagonal_input_ties_to_largest_penalty() {
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 1.0, 2.0, 0.5]));
        let cfg = ShapeConfig::default();
        let n_eff = 80.0;
        let base = cfg.c_omega * (4.0_f64.ln() / n_eff).sqrt();
        let scores: Vec<f64> = cfg
            .lambda_multipliers
            .iter()
            .map(|m| {
                let o = glasso_solve(&s, base * m, cfg.glasso_tol, cfg.glasso_max_iter).unwrap();
                assert_eq!(edge_count(&o), 0);
                ebic(&s, &o, n_eff, cfg.gamma_ebic).unwrap()
            })
            .collect();
        assert!(scores.iter().all(|e| *e == scores[0]));
        let sel = ebic_select_precision(&s, n_eff, &cfg).unwrap();
        assert_relative_eq!(sel.lambda, base * 4.0, epsilon = 1e-15);
    }

    #[test]
    fn identical_fits_tie_to_larger_penalty() {
        // both penalties exceed every off-diagonal entry, so both fits are
        // the same diagonal matrix
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.01, 0.01, 1.0]);
        let cfg = ShapeConfig {
            lambda_multipliers: vec![3.0, 1.0],
            ..ShapeConfig::default()
        };
        let sel = ebic_select_precision(&s, 50.0, &cfg).unwrap();
        let base = cfg.c_omega * (2.0_f64.ln() / 50.0).sqrt();
        assert_relative_eq!(sel.lambda, 3.0 * base, epsilon = 1e-15);
    }

    #[test]
    fn update_passthrough() {
        let cfg = ShapeConfig {
            eta_omega: 1.0,
            ..ShapeConfig::default()
        };
        let sigma = trace_normalize(&random_spd(5, 9)).unwrap();
        let prop = spd_inverse(&sigma).unwrap();
        let (omega, s) = update_precision(&DMatrix::identity(5, 5), &prop, &cfg).unwrap();
        assert_relative_eq!(omega, prop, epsilon = 1e-10);
        assert_relative_eq!(s, sigma, epsilon = 1e-10);
    }

    #[test]
    fn update_with_equal_inputs() {
        let cfg = ShapeConfig::default();
        let a = random_spd(4, 2);
        let (omega, sigma) = update_precision(&a, &a, &cfg).unwrap();
        let expected_sigma = trace_normalize(&spd_inverse(&a).unwrap()).unwrap();
        assert_relative_eq!(sigma, expected_sigma, epsilon = 1e-10);
        assert_relative_eq!(omega, spd_inverse(&expected_sigma).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn update_arithmetic_chain() {
        let cfg = ShapeConfig {
            eta_omega: 0.5,
            ..ShapeConfig::default()
        };
        let prev = DMatrix::identity(2, 2);
        let prop = DMatrix::identity(2, 2) * 4.0;
        let (omega, sigma) = update_precision(&prev, &prop, &cfg).unwrap();
        assert_relative_eq!(sigma, DMatrix::identity(2, 2), epsilon = 1e-14);
        assert_relative_eq!(omega, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn update_preserves_shape_convention(seed in 0u64..10_000, p in 1usize..7, eta in 0.05f64..1.0) {
            let cfg = ShapeConfig { eta_omega: eta, ..ShapeConfig::default() };
            let (omega, sigma) = update_precision(&random_spd(p, seed), &random_spd(p, seed + 1), &cfg).unwrap();
            prop_assert!((sigma.trace() - p as f64).abs() < 1e-8);
            prop_assert!((spd_inverse(&omega).unwrap().trace() - p as f64).abs() < 1e-8);
        }
    }

    #[test]
    fn block_is_pd_with_trace_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, p) = (60, 6);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let resp = Responsibilities::from_labels(&labels, 3).unwrap();
        let centers = DMatrix::from_fn(3, p, |_, _| rng.random_range(-0.2..0.2));
        let stacked = stack_residuals(&x, &centers).unwrap();
        let out = shape_block(&stacked, &resp, &DMatrix::identity(p, p), &ShapeConfig::default()).unwrap();
        assert!((out.sigma.trace() - p as f64).abs() < 1e-8);
        assert!(out.omega.clone().cholesky().is_some());
        assert!(out.diagnostics.tyler_iterations >= 1);
    }

    #[test]
    fn block_is_invariant_to_component_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, p, k) = (50, 5, 3);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let raw = DMatrix::from_fn(n, k, |_, _| rng.random_range(0.1..1.0));
        let sums: Vec<f64> = raw.row_iter().map(|r| r.sum()).collect();
        let resp = Responsibilities::new(DMatrix::from_fn(n, k, |i, c| raw[(i, c)] / sums[i])).unwrap();
        let centers = DMatrix::from_fn(k, p, |_, _| rng.random_range(-0.5..0.5));
        let perm = [2, 0, 1];
        let permuted_centers = DMatrix::from_fn(k, p, |c, j| centers[(perm[c], j)]);
        let cfg = ShapeConfig::default();
        let a = shape_block(&stack_residuals(&x, &centers).unwrap(), &resp, &DMatrix::identity(p, p), &cfg).unwrap();
        let b = shape_block(
            &stack_residuals(&x, &permuted_centers).unwrap(),
            &resp.permute_columns(&perm),
            &DMatrix::identity(p, p),
            &cfg,
        )
        .unwrap();
        assert_relative_eq!(a.omega, b.omega, epsilon = 1e-8);
    }
}
