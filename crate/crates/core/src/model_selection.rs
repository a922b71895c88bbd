//! Choosing the number of clusters with a gap statistic on the transformed
//! radial dispersion, using column-permuted copies of the data as the
//! reference distribution.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::GemConfig;
use crate::error::{GemError, Result};
use crate::gem::{self, mahalanobis_radii, FitResult};
use crate::rng::{self, PURPOSE_GAP};

pub use crate::sparse_kmedian::permute_columns;

/// Hard-label dispersion `n⁻¹ Σ log(1 + Δ_{i,Ĉ_i})` of a fit.
pub fn within_dispersion(x: &DMatrix<f64>, fit: &FitResult) -> Result<f64> {
    let radii = mahalanobis_radii(x, &fit.model.centers, &fit.model.omega)?;
    hard_dispersion(&radii, &fit.labels)
}

/// `n⁻¹ Σ_i log(1 + radii[i, labels[i]])`.
pub fn hard_dispersion(radii: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    if labels.len() != radii.nrows() {
        return Err(GemError::DimensionMismatch {
            expected: radii.nrows(),
            found: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(GemError::InvalidInput("no observations".into()));
    }
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        if l >= radii.ncols() {
            return Err(GemError::LabelOutOfRange { label: l, k: radii.ncols() });
        }
        total += radii[(i, l)].ln_1p();
    }
    Ok(total / labels.len() as f64)
}

/// Responsibility-weighted dispersion `n⁻¹ Σ_i Σ_k τ_ik log(1 + Δ_ik)`.
pub fn soft_dispersion(x: &DMatrix<f64>, fit: &FitResult) -> Result<f64> {
    let radii = mahalanobis_radii(x, &fit.model.centers, &fit.model.omega)?;
    let tau = fit.resp.matrix();
    let total: f64 = radii.iter().zip(tau.iter()).map(|(d, t)| t * d.ln_1p()).sum();
    Ok(total / x.nrows() as f64)
}

/// Gap values and reference spreads from observed and reference dispersions.
///
/// `w_ref[b][j]` is `None` where the reference fit failed; each column uses
/// only its surviving entries. A gap needs one survivor, a spread two.
pub fn gap_statistics(w: &[f64], w_ref: &[Vec<Option<f64>>]) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let mut gap = Vec::with_capacity(w.len());
    let mut s = Vec::with_capacity(w.len());
    for (j, wj) in w.iter().enumerate() {
        let logs: Vec<f64> = w_ref.iter().filter_map(|row| row[j]).map(f64::ln).collect();
        let b = logs.len() as f64;
        if logs.is_empty() {
            gap.push(None);
            s.push(None);
            continue;
        }
        let mean = logs.iter().sum::<f64>() / b;
        gap.push(Some(mean - wj.ln()));
        if logs.len() < 2 {
            s.push(None);
        } else {
            let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (b - 1.0);
            s.push(Some((1.0 + 1.0 / b).sqrt() * var.sqrt()));
        }
    }
    (gap, s)
}

/// One-standard-error rule and maximum-gap rule over an ascending grid.
///
/// Returns `(k_lse, k_max)`. The first is the smallest `K_j` with
/// `Gap(K_j) ≥ Gap(K_{j+1}) − s_{K_{j+1}}`, else the last candidate; a
/// missing spread counts as zero and a missing gap never satisfies the
/// rule. The second breaks ties toward the smaller K.
pub fn gap_rule(ks: &[usize], gap: &[Option<f64>], s: &[Option<f64>]) -> (usize, Option<usize>) {
    let last = *ks.last().expect("nonempty grid");
    let mut k_lse = last;
    for j in 0..ks.len().saturating_sub(1) {
        if let (Some(g), Some(next)) = (gap[j], gap[j + 1]) {
            if g >= next - s[j + 1].unwrap_or(0.0) {
                k_lse = ks[j];
                break;
            }
        }
    }
    let mut k_max: Option<(usize, f64)> = None;
    for (&k, g) in ks.iter().zip(gap) {
        if let Some(g) = *g {
            if k_max.is_none_or(|(_, best)| g > best) {
                k_max = Some((k, g));
            }
        }
    }
    (k_lse, k_max.map(|(k, _)| k))
}

/// Right-hand sides of the comparisons made by [`gap_rule`].
pub fn lse_bounds(gap: &[Option<f64>], s: &[Option<f64>]) -> Vec<Option<f64>> {
    (0..gap.len())
        .map(|j| gap.get(j + 1).copied().flatten().map(|g| g - s[j + 1].unwrap_or(0.0)))
        .collect()
}

/// Everything computed by [`select_k`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapTable {
    pub ks: Vec<usize>,
    /// Observed hard dispersion per candidate.
    pub w: Vec<f64>,
    /// Observed soft dispersion per candidate, for comparison only.
    pub w_soft: Vec<f64>,
    /// `w_ref[b][j]`: reference dispersion, `None` where the fit failed.
    pub w_ref: Vec<Vec<Option<f64>>>,
    pub gap: Vec<Option<f64>>,
    pub s: Vec<Option<f64>>,
    /// `Gap(K_{j+1}) - s_{K_{j+1}}`, the bound `Gap(K_j)` must reach; `None`
    /// for the last candidate or when the next gap is missing.
    pub lse_bound: Vec<Option<f64>>,
    pub k_lse: usize,
    pub k_max: Option<usize>,
    /// `(b, K)` reference cells dropped after a failed fit.
    pub dropped: Vec<(usize, usize)>,
}

/// Seed of the reference fit `(b, k)`.
pub fn reference_fit_seed(seed: u64, b: usize, k: usize) -> u64 {
    rng::derive_seed(seed, &[PURPOSE_GAP, b as u64, k as u64])
}

/// Seed of the column permutation producing reference `b`.
pub fn reference_data_seed(seed: u64, b: usize) -> u64 {
    rng::derive_seed(seed, &[PURPOSE_GAP, b as u64])
}

/// Fits every candidate on `x` and on `b_refs` column-permuted references
/// and applies the gap rules. Observed fits use `cfg.seed` unchanged.
pub fn select_k(x: &DMatrix<f64>, ks: &[usize], b_refs: usize, cfg: &GemConfig) -> Result<GapTable> {
    if ks.is_empty() {
        return Err(GemError::InvalidInput("candidate grid is empty".into()));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GemError::InvalidInput("candidate grid must be strictly increasing".into()));
    }
    if b_refs < 2 {
        return Err(GemError::InvalidInput("at least two reference samples are required".into()));
    }
    cfg.validate()?;

    let observed: Vec<Result<(f64, f64)>> = ks
        .par_iter()
        .map(|&k| {
            let fit = gem::fit(x, &GemConfig { k, ..cfg.clone() })?;
            Ok((within_dispersion(x, &fit)?, soft_dispersion(x, &fit)?))
        })
        .collect();
    let mut w = Vec::with_capacity(ks.len());
    let mut w_soft = Vec::with_capacity(ks.len());
    for r in observed {
        let (hard, soft) = r?;
        w.push(hard);
        w_soft.push(soft);
    }

    let references: Vec<DMatrix<f64>> = (0..b_refs)
        .into_par_iter()
        .map(|b| permute_columns(x, reference_data_seed(cfg.seed, b)))
        .collect();
    let cells: Vec<(usize, usize)> = (0..b_refs).flat_map(|b| (0..ks.len()).map(move |j| (b, j))).collect();
    let values: Vec<Option<f64>> = cells
        .par_iter()
        .map(|&(b, j)| {
            let k = ks[j];
            let ref_cfg = GemConfig {
                k,
                seed: reference_fit_seed(cfg.seed, b, k),
                ..cfg.clone()
            };
            let xr = &references[b];
            gem::fit(xr, &ref_cfg).and_then(|f| within_dispersion(xr, &f)).ok()
        })
        .collect();

    let mut w_ref = vec![vec![None; ks.len()]; b_refs];
    let mut dropped = Vec::new();
    for (&(b, j), v) in cells.iter().zip(values) {
        // a zero dispersion has no logarithm
        match v.filter(|d| *d > 0.0 && d.is_finite()) {
            Some(d) => w_ref[b][j] = Some(d),
            None => dropped.push((b, ks[j])),
        }
    }
    let (gap, s) = gap_statistics(&w, &w_ref);
    let (k_lse, k_max) = gap_rule(ks, &gap, &s);
    Ok(GapTable {
        ks: ks.to_vec(),
        w,
        w_soft,
        w_ref,
        lse_bound: lse_bounds(&gap, &s),
        gap,
        s,
        k_lse,
        k_max,
        dropped,
    })
}
