//! Nonparametric estimate of the common radial generator.
//!
//! Mahalanobis radii are mapped to `Y = log(1 + Δ)`, where a weighted
//! Gaussian kernel density is estimated. The density is converted back to a
//! log-generator on a radius grid, smoothed with a cubic smoothing spline,
//! and differentiated to give the radial score used by the center update.

mod spline;

pub use spline::{smoothing_spline, SplineFit};

use nalgebra::DMatrix;

use crate::config::GeneratorConfig;
use crate::error::{GemError, Result};
use crate::matrix_ops::{clip, InterpCurve};
use crate::responsibilities::Responsibilities;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Transformed radii stacked over (observation, component) with normalized
/// responsibility weights. Zero-weight pairs are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedRadii {
    pub transformed: Vec<f64>,
    pub weights: Vec<f64>,
    pub n_eff: f64,
}

impl WeightedRadii {
    /// Builds the stacked sample from an n×K radius matrix.
    pub fn new(radii: &DMatrix<f64>, resp: &Responsibilities) -> Result<Self> {
        let tau = resp.matrix();
        if radii.shape() != tau.shape() {
            return Err(GemError::DimensionMismatch {
                expected: tau.len(),
                found: radii.len(),
            });
        }
        let total: f64 = tau.iter().sum();
        let sum_sq: f64 = tau.iter().map(|t| t * t).sum();
        if !(total > 0.0) {
            return Err(GemError::DegenerateWeights);
        }
        let mut transformed = Vec::new();
        let mut weights = Vec::new();
        for (d, &t) in radii.iter().zip(tau.iter()) {
            if t > 0.0 {
                if !d.is_finite() {
                    return Err(GemError::NonFinite("radii"));
                }
                transformed.push(d.max(0.0).ln_1p());
                weights.push(t / total);
            }
        }
        Ok(Self {
            transformed,
            weights,
            n_eff: total * total / sum_sq,
        })
    }

    /// Sample built directly from transformed values and raw weights.
    pub fn from_transformed(transformed: Vec<f64>, raw_weights: Vec<f64>) -> Result<Self> {
        if transformed.len() != raw_weights.len() || transformed.is_empty() {
            return Err(GemError::InvalidInput("transformed radii and weights must match".into()));
        }
        let total: f64 = raw_weights.iter().sum();
        if !(total > 0.0) || raw_weights.iter().any(|w| *w < 0.0) {
            return Err(GemError::DegenerateWeights);
        }
        let sum_sq: f64 = raw_weights.iter().map(|w| w * w).sum();
        let (transformed, weights): (Vec<f64>, Vec<f64>) = transformed
            .into_iter()
            .zip(raw_weights)
            .filter(|(_, w)| *w > 0.0)
            .map(|(y, w)| (y, w / total))
            .unzip();
        Ok(Self {
            transformed,
            weights,
            n_eff: total * total / sum_sq,
        })
    }

    fn weighted_sd(&self) -> f64 {
        let mean: f64 = self.transformed.iter().zip(&self.weights).map(|(y, w)| w * y).sum();
        let var: f64 = self
            .transformed
            .iter()
            .zip(&self.weights)
            .map(|(y, w)| w * (y - mean).powi(2))
            .sum();
        var.max(0.0).sqrt()
    }
}

/// `n² / Σ τ²`, lying between n (hard labels) and Kn (uniform weights).
pub fn effective_sample_size(resp: &Responsibilities) -> f64 {
    let total: f64 = resp.matrix().iter().sum();
    let sum_sq: f64 = resp.matrix().iter().map(|t| t * t).sum();
    total * total / sum_sq
}

/// Normal-reference bandwidth `max(h_min, 1.06 σ n_eff^(-1/5))`.
pub fn plugin_bandwidth(wr: &WeightedRadii, h_min: f64) -> f64 {
    bandwidth_from(wr.weighted_sd(), wr.n_eff, h_min)
}

pub(crate) fn bandwidth_from(sd: f64, n_eff: f64, h_min: f64) -> f64 {
    h_min.max(1.06 * sd * n_eff.powf(-0.2))
}

/// Weighted Gaussian kernel density of the transformed radii at `y`.
pub fn weighted_kde(wr: &WeightedRadii, h: f64, y: f64) -> f64 {
    let s: f64 = wr
        .transformed
        .iter()
        .zip(&wr.weights)
        .map(|(&yi, &w)| {
            let z = (y - yi) / h;
            w * (-0.5 * z * z).exp()
        })
        .sum();
    s * INV_SQRT_2PI / h
}

/// Equally spaced transformed-radius grid and its radius counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusGrid {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
}

/// Grid on `[max(0, min Y - 3h), max Y + 3h]` with `u = max(e^y - 1, eps_u)`.
pub fn build_grid(wr: &WeightedRadii, h: f64, m: usize, eps_u: f64) -> Result<RadiusGrid> {
    if m < 2 {
        return Err(GemError::InvalidInput("grid needs at least two points".into()));
    }
    if !(h > 0.0) {
        return Err(GemError::InvalidInput("bandwidth must be positive".into()));
    }
    let lo_y = wr.transformed.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_y = wr.transformed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo_y.is_finite() || !hi_y.is_finite() {
        return Err(GemError::InvalidInput("no positively weighted radii".into()));
    }
    let lo = (lo_y - 3.0 * h).max(0.0);
    let hi = hi_y + 3.0 * h;
    let step = (hi - lo) / (m - 1) as f64;
    let y: Vec<f64> = (0..m).map(|i| if i + 1 == m { hi } else { lo + step * i as f64 }).collect();
    let u: Vec<f64> = y.iter().map(|&v| v.exp_m1().max(eps_u)).collect();
    if u.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GemError::InvalidInput("radius grid collapsed below eps_u".into()));
    }
    Ok(RadiusGrid { y, u })
}

/// Trapezoid approximation of `∫ f(log(1+u)) / (1+u) du` over the grid,
/// given density values `f` at the grid points.
pub fn trapezoid_normalizer(u: &[f64], f: &[f64]) -> f64 {
    u.windows(2)
        .zip(f.windows(2))
        .map(|(uw, fw)| 0.5 * (uw[1] - uw[0]) * (fw[1] / (1.0 + uw[1]) + fw[0] / (1.0 + uw[0])))
        .sum()
}

/// Raw log-generator from density values on the grid:
/// `(1 - p/2) log u + log f - log(1 + u) - log C`.
pub fn raw_log_generator_from_density(grid: &RadiusGrid, density: &[f64], p: usize, floor: f64) -> Vec<f64> {
    let c = trapezoid_normalizer(&grid.u, density).max(floor);
    let log_c = c.ln();
    let shape = 1.0 - p as f64 / 2.0;
    grid.u
        .iter()
        .zip(density)
        .map(|(&u, &f)| shape * u.ln() + f.max(floor).ln() - u.ln_1p() - log_c)
        .collect()
}

/// Raw log-generator values at the grid points.
pub fn raw_log_generator(wr: &WeightedRadii, h: f64, grid: &RadiusGrid, p: usize, floor: f64) -> Vec<f64> {
    let density: Vec<f64> = grid.y.iter().map(|&y| weighted_kde(wr, h, y)).collect();
    raw_log_generator_from_density(grid, &density, p, floor)
}

/// Smoothed log-generator and clipped radial score on a radius grid,
/// extended to all radii by linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorEstimate {
    log_g: InterpCurve,
    score: InterpCurve,
    y_grid: Vec<f64>,
    bandwidth: f64,
}

impl GeneratorEstimate {
    /// Reassembles an estimate from stored grids.
    pub fn from_parts(u_grid: Vec<f64>, y_grid: Vec<f64>, log_g: Vec<f64>, score: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if y_grid.len() != u_grid.len() {
            return Err(GemError::InvalidInput("grid lengths differ".into()));
        }
        Ok(Self {
            log_g: InterpCurve::new(u_grid.clone(), log_g)?,
            score: InterpCurve::new(u_grid, score)?,
            y_grid,
            bandwidth,
        })
    }

    pub fn u_grid(&self) -> &[f64] {
        self.log_g.knots()
    }

    pub fn y_grid(&self) -> &[f64] {
        &self.y_grid
    }

    pub fn log_g_values(&self) -> &[f64] {
        self.log_g.values()
    }

    pub fn score_values(&self) -> &[f64] {
        self.score.values()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Interpolated log-generator at radius `u`.
    pub fn log_g(&self, u: f64) -> f64 {
        self.log_g.eval(u)
    }

    /// Interpolated radial score at radius `u`.
    pub fn score(&self, u: f64) -> f64 {
        self.score.eval(u)
    }
}

/// Full generator update: bandwidth, grid, raw log-generator, spline
/// smoothing on the rescaled transformed-radius axis, and clipped score.
pub fn build_generator(wr: &WeightedRadii, p: usize, cfg: &GeneratorConfig) -> Result<GeneratorEstimate> {
    cfg.validate()?;
    let h = plugin_bandwidth(wr, cfg.h_min);
    let grid = build_grid(wr, h, cfg.grid_size, cfg.eps_u)?;
    let raw = raw_log_generator(wr, h, &grid, p, cfg.density_floor);
    let (y0, span) = (grid.y[0], grid.y[grid.y.len() - 1] - grid.y[0]);
    let scaled: Vec<f64> = grid.y.iter().map(|y| (y - y0) / span).collect();
    let fit = smoothing_spline(&scaled, &raw, cfg.lambda_sp)?;
    let score = fit
        .derivative
        .iter()
        .zip(&grid.u)
        .map(|(d, u)| clip(-(d / span) / (1.0 + u), cfg.omega_min, cfg.omega_max))
        .collect::<Result<Vec<_>>>()?;
    GeneratorEstimate::from_parts(grid.u, grid.y, fit.fitted, score, h)
}
