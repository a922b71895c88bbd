//! Head-to-head Monte Carlo comparison of GEM against baseline clusterers on
//! simulated designs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::GemConfig;
use crate::error::{GemError, Result};
use crate::gem;
use crate::metrics::{accuracy, ari, kmeans_baseline, oracle_classify};
use crate::rng::{self, PURPOSE_REPLICATE};
use crate::simdata::{sample_mixture, SimDesign};
use crate::sparse_kmedian::{self, kmedian_fit_at_tau};

/// Random restarts used by the K-means baseline.
pub const KMEANS_STARTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gem,
    Kmeans,
    /// K-median on every coordinate.
    Kmedian,
    /// The thresholded K-median initializer on its own.
    SparseKmedian,
    /// Bayes rule under the true parameters.
    Oracle,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Gem,
        Method::Kmeans,
        Method::Kmedian,
        Method::SparseKmedian,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gem => "gem",
            Method::Kmeans => "kmeans",
            Method::Kmedian => "kmedian",
            Method::SparseKmedian => "sparse-kmedian",
            Method::Oracle => "oracle",
        }
    }
}

/// Score of one method on one replicate; `None` scores mean the method failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: Method,
    pub accuracy: Option<f64>,
    pub ari: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    /// Seed of the simulated data set.
    pub data_seed: u64,
    pub scores: Vec<MethodScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Means over the replicates where the method succeeded.
    pub mean_accuracy: Option<f64>,
    pub mean_ari: Option<f64>,
    pub failures: usize,
}

/// Seed of the data set used by replicate `r`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    rng::derive_seed(seed, &[PURPOSE_REPLICATE, r as u64])
}

/// Labels produced by `method` on `x`. `cfg.k` must equal the design's K.
pub fn cluster_with(method: Method, x: &nalgebra::DMatrix<f64>, design: &SimDesign, cfg: &GemConfig) -> Result<Vec<usize>> {
    let k = cfg.k;
    match method {
        Method::Gem => Ok(gem::fit(x, cfg)?.labels),
        Method::Kmeans => Ok(kmeans_baseline(x, k, KMEANS_STARTS, cfg.seed)?.labels),
        Method::Kmedian => Ok(kmedian_fit_at_tau(x, k, 0.0, cfg.init.starts, cfg.init.max_iter, cfg.seed)?.labels),
        Method::SparseKmedian => Ok(sparse_kmedian::initialize(x, k, &cfg.init, cfg.seed)?.labels),
        Method::Oracle => oracle_classify(x, design),
    }
}

/// Simulates replicate `r` of `design` and scores every method on it.
/// The design seed is replaced by the replicate's derived seed, which also
/// seeds the fitted methods.
pub fn run_replicate(design: &SimDesign, r: usize, methods: &[Method], cfg: &GemConfig) -> Result<ReplicateResult> {
    let data_seed = replicate_seed(design.seed, r);
    let design = SimDesign {
        seed: data_seed,
        ..design.clone()
    };
    let sample = sample_mixture(&design)?;
    let cfg = GemConfig {
        k: design.k,
        seed: data_seed,
        ..cfg.clone()
    };
    let scores = methods
        .iter()
        .map(|&method| match cluster_with(method, &sample.x, &design, &cfg) {
            Ok(labels) => MethodScore {
                method,
                accuracy: accuracy(&labels, &sample.labels, design.k).ok(),
                ari: ari(&labels, &sample.labels).ok(),
                error: None,
            },
            Err(e) => MethodScore {
                method,
                accuracy: None,
                ari: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(ReplicateResult {
        replicate: r,
        data_seed,
        scores,
    })
}

/// Runs `reps` replicates concurrently; results are ordered by replicate.
pub fn run_benchmark(design: &SimDesign, reps: usize, methods: &[Method], cfg: &GemConfig) -> Result<Vec<ReplicateResult>> {
    if reps == 0 {
        return Err(GemError::InvalidInput("at least one replicate is required".into()));
    }
    if methods.is_empty() {
        return Err(GemError::InvalidInput("no methods requested".into()));
    }
    design.validate()?;
    cfg.validate()?;
    (0..reps).into_par_iter().map(|r| run_replicate(design, r, methods, cfg)).collect()
}

/// Per-method means in the order methods first appear.
pub fn summarize(results: &[ReplicateResult]) -> Vec<MethodSummary> {
    let mut order: Vec<Method> = Vec::new();
    for s in results.iter().flat_map(|r| &r.scores) {
        if !order.contains(&s.method) {
            order.push(s.method);
        }
    }
    order
        .into_iter()
        .map(|method| {
            let scores: Vec<&MethodScore> = results.iter().flat_map(|r| &r.scores).filter(|s| s.method == method).collect();
            let mean = |f: fn(&MethodScore) -> Option<f64>| {
                let v: Vec<f64> = scores.iter().filter_map(|s| f(s)).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            MethodSummary {
                method,
                mean_accuracy: mean(|s| s.accuracy),
                mean_ari: mean(|s| s.ari),
                failures: scores.iter().filter(|s| s.error.is_some()).count(),
            }
        })
        .collect()
}
