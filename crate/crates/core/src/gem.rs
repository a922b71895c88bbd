//! Outer generalized-EM loop: radii, E-step, generator, damped centers,
//! common precision, multistart and the plug-in classifier.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::config::GemConfig;
use crate::error::{GemError, Result};
use crate::generator::{build_generator, GeneratorEstimate, WeightedRadii};
use crate::responsibilities::Responsibilities;
use crate::rng::{self, PURPOSE_MULTISTART};
use crate::shape::{shape_block, stack_residuals, ShapeDiagnostics};
use crate::sparse_kmedian;

/// One full parameter iterate.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub pi: Vec<f64>,
    /// K×p component centers.
    pub centers: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub generator: GeneratorEstimate,
}

impl ModelState {
    pub fn k(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    /// Checks the simplex, trace and inverse-pairing invariants.
    pub fn check(&self, tol: f64) -> Result<()> {
        let p = self.dim();
        if self.pi.len() != self.k() {
            return Err(GemError::DimensionMismatch {
                expected: self.k(),
                found: self.pi.len(),
            });
        }
        if self.omega.shape() != (p, p) || self.sigma.shape() != (p, p) {
            return Err(GemError::DimensionMismatch {
                expected: p,
                found: self.omega.nrows(),
            });
        }
        if self.pi.iter().any(|&v| !(v >= 0.0)) || (self.pi.iter().sum::<f64>() - 1.0).abs() > tol {
            return Err(GemError::InvalidInput("mixing weights are not on the simplex".into()));
        }
        if (self.sigma.trace() - p as f64).abs() > tol {
            return Err(GemError::DegenerateTrace(self.sigma.trace()));
        }
        let prod = &self.omega * &self.sigma - DMatrix::<f64>::identity(p, p);
        if prod.iter().any(|v| v.abs() > tol) {
            return Err(GemError::InvalidInput("precision and scatter are not inverse".into()));
        }
        Ok(())
    }
}

/// `Δ_ik = (x_i - μ_k)ᵀ Ω (x_i - μ_k)`, clamped at zero.
pub fn mahalanobis_radii(x: &DMatrix<f64>, centers: &DMatrix<f64>, omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = x.ncols();
    if centers.ncols() != p || omega.shape() != (p, p) {
        return Err(GemError::DimensionMismatch {
            expected: p,
            found: if centers.ncols() != p { centers.ncols() } else { omega.nrows() },
        });
    }
    let (n, k) = (x.nrows(), centers.nrows());
    let mut out = DMatrix::zeros(n, k);
    let mut diff = DMatrix::zeros(n, p);
    for c in 0..k {
        for j in 0..p {
            let mu = centers[(c, j)];
            for i in 0..n {
                diff[(i, j)] = x[(i, j)] - mu;
            }
        }
        let proj = &diff * omega;
        for i in 0..n {
            let q: f64 = diff.row(i).dot(&proj.row(i));
            out[(i, c)] = q.max(0.0);
        }
    }
    Ok(out)
}

fn log_weights(pi: &[f64]) -> Vec<f64> {
    pi.iter().map(|&v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY }).collect()
}

fn row_scores(radii: &DMatrix<f64>, log_pi: &[f64], generator: &GeneratorEstimate, i: usize, buf: &mut [f64]) {
    for (c, b) in buf.iter_mut().enumerate() {
        *b = log_pi[c] + generator.log_g(radii[(i, c)]);
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

/// Posterior responsibilities by a log-space softmax, and the updated mixing
/// proportions. A row where every component scores `-inf` becomes uniform.
pub fn e_step(radii: &DMatrix<f64>, pi: &[f64], generator: &GeneratorEstimate) -> Result<(Responsibilities, Vec<f64>)> {
    let (n, k) = radii.shape();
    if pi.len() != k {
        return Err(GemError::DimensionMismatch {
            expected: k,
            found: pi.len(),
        });
    }
    let log_pi = log_weights(pi);
    let mut tau = DMatrix::zeros(n, k);
    let mut buf = vec![0.0; k];
    for i in 0..n {
        row_scores(radii, &log_pi, generator, i, &mut buf);
        let lse = log_sum_exp(&buf);
        if lse == f64::NEG_INFINITY {
            for c in 0..k {
                tau[(i, c)] = 1.0 / k as f64;
            }
            continue;
        }
        for c in 0..k {
            tau[(i, c)] = (buf[c] - lse).exp();
        }
        let s: f64 = (0..k).map(|c| tau[(i, c)]).sum();
        for c in 0..k {
            tau[(i, c)] /= s;
        }
    }
    let resp = Responsibilities::new_unchecked(tau);
    let mut pi_new = resp.column_means();
    let total: f64 = pi_new.iter().sum();
    pi_new.iter_mut().for_each(|v| *v /= total);
    Ok((resp, pi_new))
}

/// `Σ_i log Σ_k π_k ĝ(Δ_ik)` from precomputed radii.
pub fn pseudo_loglikelihood_from_radii(radii: &DMatrix<f64>, pi: &[f64], generator: &GeneratorEstimate) -> f64 {
    let log_pi = log_weights(pi);
    let mut buf = vec![0.0; pi.len()];
    (0..radii.nrows())
        .map(|i| {
            row_scores(radii, &log_pi, generator, i, &mut buf);
            log_sum_exp(&buf)
        })
        .sum()
}

pub fn pseudo_loglikelihood(x: &DMatrix<f64>, model: &ModelState) -> Result<f64> {
    let radii = mahalanobis_radii(x, &model.centers, &model.omega)?;
    Ok(pseudo_loglikelihood_from_radii(&radii, &model.pi, &model.generator))
}

/// Damped radial-score weighted centers. The second output flags
/// components whose weights summed to zero and kept their old center.
pub fn center_update(
    x: &DMatrix<f64>,
    resp: &Responsibilities,
    radii: &DMatrix<f64>,
    generator: &GeneratorEstimate,
    centers_prev: &DMatrix<f64>,
    eta_mu: f64,
) -> Result<(DMatrix<f64>, Vec<bool>)> {
    let (n, p) = x.shape();
    let k = centers_prev.nrows();
    if resp.n() != n || resp.k() != k || radii.shape() != (n, k) || centers_prev.ncols() != p {
        return Err(GemError::DimensionMismatch {
            expected: n * k,
            found: radii.len(),
        });
    }
    let mut out = centers_prev.clone();
    let mut kept = vec![false; k];
    for c in 0..k {
        let w: Vec<f64> = (0..n).map(|i| resp.get(i, c) * generator.score(radii[(i, c)])).collect();
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            kept[c] = true;
            continue;
        }
        for j in 0..p {
            let proposal = (0..n).map(|i| w[i] * x[(i, j)]).sum::<f64>() / total;
            out[(c, j)] = (1.0 - eta_mu) * centers_prev[(c, j)] + eta_mu * proposal;
        }
    }
    Ok((out, kept))
}

/// Sizes of one outer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    /// Largest absolute coordinate change over all centers.
    pub center: f64,
    /// `‖ΔΩ‖_F / max(1, ‖Ω_old‖_F)`.
    pub precision: f64,
    pub mixing: f64,
}

impl StepSizes {
    pub fn max(&self) -> f64 {
        self.center.max(self.precision).max(self.mixing)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationDiagnostics {
    pub steps: StepSizes,
    pub shape: ShapeDiagnostics,
    /// Components that kept their previous center.
    pub kept_centers: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub model: ModelState,
    pub resp: Responsibilities,
    pub diagnostics: IterationDiagnostics,
}

/// One outer iteration. Generator and center updates both use the radii of
/// the incoming model; the shape block sees residuals at the new centers.
pub fn gem_iterate(x: &DMatrix<f64>, model: &ModelState, cfg: &GemConfig) -> Result<IterationOutput> {
    let p = x.ncols();
    let radii = mahalanobis_radii(x, &model.centers, &model.omega)?;
    let (resp, pi) = e_step(&radii, &model.pi, &model.generator)?;
    let generator = build_generator(&WeightedRadii::new(&radii, &resp)?, p, &cfg.generator)?;
    let (centers, kept) = center_update(x, &resp, &radii, &generator, &model.centers, cfg.eta_mu)?;
    let residuals = stack_residuals(x, &centers)?;
    let shape = shape_block(&residuals, &resp, &model.omega, &cfg.shape)?;

    let center_step = (&centers - &model.centers).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let precision_step = (&shape.omega - &model.omega).norm() / model.omega.norm().max(1.0);
    let mixing_step = pi.iter().zip(&model.pi).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(IterationOutput {
        model: ModelState {
            pi,
            centers,
            omega: shape.omega,
            sigma: shape.sigma,
            generator,
        },
        resp,
        diagnostics: IterationDiagnostics {
            steps: StepSizes {
                center: center_step,
                precision: precision_step,
                mixing: mixing_step,
            },
            shape: shape.diagnostics,
            kept_centers: kept.iter().enumerate().filter(|(_, &f)| f).map(|(c, _)| c).collect(),
        },
    })
}

/// Plug-in rule `argmax_k log π_k + log ĝ(Δ_k(x))`, lowest index on ties.
pub fn classify(x: &DMatrix<f64>, model: &ModelState) -> Result<Vec<usize>> {
    let radii = mahalanobis_radii(x, &model.centers, &model.omega)?;
    Ok(classify_from_radii(&radii, &model.pi, &model.generator))
}

fn classify_from_radii(radii: &DMatrix<f64>, pi: &[f64], generator: &GeneratorEstimate) -> Vec<usize> {
    let log_pi = log_weights(pi);
    let mut buf = vec![0.0; pi.len()];
    (0..radii.nrows())
        .map(|i| {
            row_scores(radii, &log_pi, generator, i, &mut buf);
            let mut best = 0;
            for c in 1..buf.len() {
                if buf[c] > buf[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Starting model from initial centers and hard labels: label proportions,
/// identity shape, and a generator built from the identity-metric radii.
pub fn initial_model(x: &DMatrix<f64>, centers: &DMatrix<f64>, labels: &[usize], cfg: &GemConfig) -> Result<ModelState> {
    let (n, p) = x.shape();
    let k = centers.nrows();
    if labels.len() != n {
        return Err(GemError::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    let hard = Responsibilities::from_labels(labels, k)?;
    let pi = hard.column_means();
    if pi.iter().any(|&v| v == 0.0) {
        return Err(GemError::InvalidInput("initial partition has an empty cluster".into()));
    }
    let omega = DMatrix::identity(p, p);
    let radii = mahalanobis_radii(x, centers, &omega)?;
    let generator = build_generator(&WeightedRadii::new(&radii, &hard)?, p, &cfg.generator)?;
    Ok(ModelState {
        pi,
        centers: centers.clone(),
        sigma: omega.clone(),
        omega,
        generator,
    })
}

/// Output of one or more GEM runs.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelState,
    pub resp: Responsibilities,
    /// Zero-based row-argmax labels.
    pub labels: Vec<usize>,
    pub pseudo_loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterationDiagnostics>,
    /// Index of the winning start.
    pub start: usize,
    /// Pseudo-loglikelihood of every start; `None` where the start failed.
    pub start_logliks: Vec<Option<f64>>,
}

/// Runs the outer loop from `model`, then recomputes the generator and
/// responsibilities once at the final centers and precision.
pub fn run_from(x: &DMatrix<f64>, mut model: ModelState, cfg: &GemConfig) -> Result<FitResult> {
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_outer {
        let out = gem_iterate(x, &model, cfg)?;
        model = out.model;
        let done = out.diagnostics.steps.max() <= cfg.outer_tol;
        history.push(out.diagnostics);
        if done {
            converged = true;
            break;
        }
    }
    let p = x.ncols();
    let radii = mahalanobis_radii(x, &model.centers, &model.omega)?;
    let (first, pi) = e_step(&radii, &model.pi, &model.generator)?;
    let generator = build_generator(&WeightedRadii::new(&radii, &first)?, p, &cfg.generator)?;
    let (resp, _) = e_step(&radii, &pi, &generator)?;
    model.pi = pi;
    model.generator = generator;
    let labels = resp.argmax_labels();
    let pseudo_loglik = pseudo_loglikelihood_from_radii(&radii, &model.pi, &model.generator);
    if !pseudo_loglik.is_finite() {
        return Err(GemError::NonFinite("pseudo-loglikelihood"));
    }
    Ok(FitResult {
        model,
        resp,
        labels,
        pseudo_loglik,
        iterations: history.len(),
        converged,
        history,
        start: 0,
        start_logliks: vec![Some(pseudo_loglik)],
    })
}

fn single_start(x: &DMatrix<f64>, cfg: &GemConfig, start: usize) -> Result<FitResult> {
    let seed = rng::derive_seed(cfg.seed, &[PURPOSE_MULTISTART, start as u64]);
    let init = sparse_kmedian::initialize(x, cfg.k, &cfg.init, seed)?;
    let model = initial_model(x, &init.centers, &init.labels, cfg)?;
    run_from(x, model, cfg)
}

/// Multistart fit; the start with the largest pseudo-loglikelihood wins,
/// the earliest on ties.
pub fn fit(x: &DMatrix<f64>, cfg: &GemConfig) -> Result<FitResult> {
    cfg.validate()?;
    let (n, p) = x.shape();
    if p == 0 {
        return Err(GemError::InvalidInput("data has no columns".into()));
    }
    if n < cfg.k {
        return Err(GemError::Infeasible { k: cfg.k, n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GemError::NonFinite("data"));
    }
    let runs: Vec<Result<FitResult>> = (0..cfg.starts).into_par_iter().map(|s| single_start(x, cfg, s)).collect();
    let start_logliks: Vec<Option<f64>> = runs.iter().map(|r| r.as_ref().ok().map(|f| f.pseudo_loglik)).collect();
    let mut best: Option<(usize, FitResult)> = None;
    let mut last_err = None;
    for (s, run) in runs.into_iter().enumerate() {
        match run {
            Ok(f) => {
                if best.as_ref().is_none_or(|(_, b)| f.pseudo_loglik > b.pseudo_loglik) {
                    best = Some((s, f));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((s, mut f)) => {
            f.start = s;
            f.start_logliks = start_logliks;
            Ok(f)
        }
        None => Err(GemError::AllStartsFailed(Box::new(
            last_err.unwrap_or(GemError::InvalidInput("no starts requested".into())),
        ))),
    }
}
