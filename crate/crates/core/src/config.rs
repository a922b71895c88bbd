//! Tuning knobs for every stage of the fit.
//!
//! All structs deserialize with per-field defaults, so a partial JSON file
//! only needs to name the values it overrides.

use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};

/// Settings for the common-precision block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeConfig {
    /// Ridge weight toward the identity inside the Tyler iteration.
    pub rho_t: f64,
    /// Floor applied to squared residual norms and Tyler quadratic forms.
    pub eps_r: f64,
    /// Smallest eigenvalue allowed after positive-definite projection.
    pub eps_pd: f64,
    /// POET threshold constant: `lambda_u = c_u * sqrt(log p / n_eff)`.
    pub c_u: f64,
    /// Graphical lasso base penalty constant.
    pub c_omega: f64,
    pub gamma_ebic: f64,
    /// Multipliers applied to the base penalty to form the EBIC grid.
    pub lambda_multipliers: Vec<f64>,
    /// Upper bound on the factor count searched by the eigenvalue-ratio rule.
    pub m_kr: usize,
    pub tyler_max_iter: usize,
    pub tyler_tol: f64,
    /// Damping of the accepted precision update.
    pub eta_omega: f64,
    pub glasso_tol: f64,
    pub glasso_max_iter: usize,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self {
            rho_t: 0.05,
            eps_r: 1e-10,
            eps_pd: 1e-8,
            c_u: 0.5,
            c_omega: 0.5,
            gamma_ebic: 0.5,
            lambda_multipliers: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            m_kr: 8,
            tyler_max_iter: 100,
            tyler_tol: 1e-6,
            eta_omega: 0.7,
            glasso_tol: 1e-4,
            glasso_max_iter: 200,
        }
    }
}

impl ShapeConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.rho_t > 0.0 && self.rho_t < 1.0, "rho_t must lie in (0, 1)")?;
        check(self.eps_r > 0.0, "eps_r must be positive")?;
        check(self.eps_pd > 0.0, "eps_pd must be positive")?;
        check(self.c_u >= 0.0, "c_u must be nonnegative")?;
        check(self.c_omega >= 0.0, "c_omega must be nonnegative")?;
        check(self.gamma_ebic >= 0.0, "gamma_ebic must be nonnegative")?;
        check(
            !self.lambda_multipliers.is_empty()
                && self.lambda_multipliers.iter().all(|m| m.is_finite() && *m >= 0.0),
            "lambda_multipliers must be a nonempty list of nonnegative values",
        )?;
        check(self.tyler_max_iter >= 1, "tyler_max_iter must be at least 1")?;
        check(self.tyler_tol > 0.0, "tyler_tol must be positive")?;
        check(
            self.eta_omega > 0.0 && self.eta_omega <= 1.0,
            "eta_omega must lie in (0, 1]",
        )?;
        check(self.glasso_tol > 0.0, "glasso_tol must be positive")?;
        check(self.glasso_max_iter >= 1, "glasso_max_iter must be at least 1")
    }
}

/// Settings for the radial generator estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Number of grid points on the transformed-radius scale.
    pub grid_size: usize,
    /// Smoothing-spline penalty, applied after rescaling the grid to [0, 1].
    pub lambda_sp: f64,
    pub h_min: f64,
    pub eps_u: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    /// Density floor applied before taking logarithms.
    pub density_floor: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            grid_size: 200,
            lambda_sp: 1e-3,
            h_min: 1e-3,
            eps_u: 1e-8,
            omega_min: 1e-3,
            omega_max: 1e3,
            density_floor: 1e-300,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.grid_size >= 2, "grid_size must be at least 2")?;
        check(self.lambda_sp > 0.0, "lambda_sp must be positive")?;
        check(self.h_min > 0.0, "h_min must be positive")?;
        check(self.eps_u > 0.0, "eps_u must be positive")?;
        check(
            self.omega_min <= self.omega_max,
            "omega_min must not exceed omega_max",
        )?;
        check(self.density_floor > 0.0, "density_floor must be positive")
    }
}

/// Settings for the sparse K-median initializer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Column-permutation replicates used to select the sparsity threshold.
    pub permutations: usize,
    /// Random restarts per K-median fit.
    pub starts: usize,
    pub max_iter: usize,
    /// Quantile levels of the positive coordinate dispersions forming the
    /// threshold grid (zero is always included).
    pub quantiles: Vec<f64>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            permutations: 10,
            starts: 10,
            max_iter: 50,
            quantiles: (1..=9).map(|d| d as f64 / 10.0).collect(),
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.permutations >= 1, "permutations must be at least 1")?;
        check(self.starts >= 1, "init starts must be at least 1")?;
        check(self.max_iter >= 1, "init max_iter must be at least 1")?;
        check(
            self.quantiles.iter().all(|q| (0.0..=1.0).contains(q)),
            "quantile levels must lie in [0, 1]",
        )
    }
}

/// Complete configuration of a GEM fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GemConfig {
    /// Number of mixture components.
    pub k: usize,
    /// Damping of the accepted center update.
    pub eta_mu: f64,
    pub shape: ShapeConfig,
    pub generator: GeneratorConfig,
    pub init: InitConfig,
    /// Independent outer starts; the best pseudo-loglikelihood wins.
    pub starts: usize,
    pub max_outer: usize,
    pub outer_tol: f64,
    pub seed: u64,
}

impl Default for GemConfig {
    fn default() -> Self {
        Self {
            k: 2,
            eta_mu: 0.7,
            shape: ShapeConfig::default(),
            generator: GeneratorConfig::default(),
            init: InitConfig::default(),
            starts: 3,
            max_outer: 25,
            outer_tol: 1e-4,
            seed: 0,
        }
    }
}

impl GemConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check(self.k >= 1, "k must be at least 1")?;
        check(
            self.eta_mu > 0.0 && self.eta_mu <= 1.0,
            "eta_mu must lie in (0, 1]",
        )?;
        check(self.starts >= 1, "starts must be at least 1")?;
        check(self.max_outer >= 1, "max_outer must be at least 1")?;
        check(self.outer_tol > 0.0, "outer_tol must be positive")?;
        self.shape.validate()?;
        self.generator.validate()?;
        self.init.validate()
    }
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(GemError::InvalidInput(msg.to_string()))
    }
}
