//! JSON documents written by the commands.

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use ellipse_gem::config::GemConfig;
use ellipse_gem::gem::{FitResult, IterationDiagnostics, ModelState};
use ellipse_gem::generator::GeneratorEstimate;
use ellipse_gem::model_selection::GapTable;

pub const SCHEMA_VERSION: u32 = 1;

/// The only part of an output document that varies between identical runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub timestamp: String,
}

impl Metadata {
    pub fn now() -> Self {
        Self {
            tool: "ellipse-gem".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorJson {
    pub u_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    pub log_g: Vec<f64>,
    pub score: Vec<f64>,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub k: usize,
    pub p: usize,
    pub pi: Vec<f64>,
    /// One row per component.
    pub centers: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub generator: GeneratorJson,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        bail!("{what} must be {nrows}×{ncols}");
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

impl ModelJson {
    pub fn from_model(m: &ModelState) -> Self {
        let g = &m.generator;
        Self {
            k: m.k(),
            p: m.dim(),
            pi: m.pi.clone(),
            centers: rows(&m.centers),
            omega: rows(&m.omega),
            sigma: rows(&m.sigma),
            generator: GeneratorJson {
                u_grid: g.u_grid().to_vec(),
                y_grid: g.y_grid().to_vec(),
                log_g: g.log_g_values().to_vec(),
                score: g.score_values().to_vec(),
                bandwidth: g.bandwidth(),
            },
        }
    }

    pub fn to_model(&self) -> Result<ModelState> {
        let g = &self.generator;
        let generator = GeneratorEstimate::from_parts(
            g.u_grid.clone(),
            g.y_grid.clone(),
            g.log_g.clone(),
            g.score.clone(),
            g.bandwidth,
        )
        .context("invalid generator in model file")?;
        if self.pi.len() != self.k {
            bail!("pi must have {} entries", self.k);
        }
        Ok(ModelState {
            pi: self.pi.clone(),
            centers: from_rows(&self.centers, self.k, self.p, "centers")?,
            omega: from_rows(&self.omega, self.p, self.p, "omega")?,
            sigma: from_rows(&self.sigma, self.p, self.p, "sigma")?,
            generator,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationJson {
    pub center_step: f64,
    pub precision_step: f64,
    pub mixing_step: f64,
    pub factor_count: usize,
    pub lambda_u: f64,
    pub lambda_omega: f64,
    pub tyler_iterations: usize,
    pub tyler_converged: bool,
    /// One-based components whose center update was rejected.
    pub kept_centers: Vec<usize>,
}

impl From<&IterationDiagnostics> for IterationJson {
    fn from(d: &IterationDiagnostics) -> Self {
        Self {
            center_step: d.steps.center,
            precision_step: d.steps.precision,
            mixing_step: d.steps.mixing,
            factor_count: d.shape.factor_count,
            lambda_u: d.shape.lambda_u,
            lambda_omega: d.shape.lambda_omega,
            tyler_iterations: d.shape.tyler_iterations,
            tyler_converged: d.shape.tyler_converged,
            kept_centers: d.kept_centers.iter().map(|c| c + 1).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// One-based index of the winning start.
    pub start: usize,
    pub start_pseudo_logliks: Vec<Option<f64>>,
    pub history: Vec<IterationJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub metadata: Metadata,
    pub config: GemConfig,
    pub model: ModelJson,
    /// One-based labels.
    pub labels: Vec<usize>,
    pub pseudo_loglik: f64,
    pub diagnostics: FitDiagnostics,
}

impl FitReport {
    pub fn new(fit: &FitResult, cfg: &GemConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            metadata: Metadata::now(),
            config: cfg.clone(),
            model: ModelJson::from_model(&fit.model),
            labels: fit.labels.iter().map(|l| l + 1).collect(),
            pseudo_loglik: fit.pseudo_loglik,
            diagnostics: FitDiagnostics {
                iterations: fit.iterations,
                converged: fit.converged,
                start: fit.start + 1,
                start_pseudo_logliks: fit.start_logliks.clone(),
                history: fit.history.iter().map(IterationJson::from).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub schema_version: u32,
    pub metadata: Metadata,
    pub config: GemConfig,
    pub b: usize,
    pub table: GapTable,
}
