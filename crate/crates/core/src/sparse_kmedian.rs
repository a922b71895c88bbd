//! Robust sparse K-median initialization.
//!
//! Clusters are represented by coordinate-wise medians. A coordinate takes
//! part in the L1 assignment only when the medians are spread out along it
//! (dispersion `D_j >= tau`); the threshold `tau` is picked by comparing the
//! between-cluster dispersion against column-permuted reference data.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rayon::prelude::*;

use crate::config::InitConfig;
use crate::error::{GemError, Result};
use crate::responsibilities::Responsibilities;
use crate::rng::{self, PURPOSE_KMEDIAN_FIT, PURPOSE_PERMUTE};

/// Result of one sparse K-median fit at a fixed threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct KMedianState {
    /// K×p coordinate-wise cluster medians.
    pub medians: DMatrix<f64>,
    /// Zero-based cluster label per observation.
    pub labels: Vec<usize>,
    /// Coordinates used by the assignment rule, ascending.
    pub active_set: Vec<usize>,
    /// L1 objective on the active set.
    pub objective: f64,
    /// Between-cluster L1 dispersion.
    pub between_dispersion: f64,
    /// Objective after every median update of the winning start.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// Output of the initializer.
#[derive(Debug, Clone)]
pub struct InitResult {
    /// K×p initial centers.
    pub centers: DMatrix<f64>,
    pub hard_resp: Responsibilities,
    pub labels: Vec<usize>,
    pub tau: f64,
    pub tau_grid: Vec<f64>,
    pub state: KMedianState,
}

/// Median of a buffer; reorders the buffer.
pub(crate) fn median_in_place(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    debug_assert!(n > 0);
    let mid = n / 2;
    let (lower, upper, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    }
}

/// Coordinate-wise medians of all rows.
pub fn column_medians(x: &DMatrix<f64>) -> Vec<f64> {
    x.column_iter()
        .map(|c| median_in_place(&mut c.iter().copied().collect::<Vec<_>>()))
        .collect()
}

/// Per-coordinate dispersion of the cluster medians around their mean and
/// the coordinates whose dispersion reaches `tau` (all of them if none do).
pub fn dispersion_and_support(medians: &DMatrix<f64>, tau: f64) -> (Vec<f64>, Vec<usize>) {
    let k = medians.nrows() as f64;
    let dispersion: Vec<f64> = medians
        .column_iter()
        .map(|c| {
            let mean = c.sum() / k;
            c.iter().map(|v| (v - mean).abs()).sum()
        })
        .collect();
    let mut support: Vec<usize> = (0..dispersion.len()).filter(|&j| dispersion[j] >= tau).collect();
    if support.is_empty() {
        support = (0..dispersion.len()).collect();
    }
    (dispersion, support)
}

/// Row-major copy of the data for fast per-observation scans.
struct Rows {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Rows {
    fn new(x: &DMatrix<f64>) -> Self {
        let (n, p) = x.shape();
        let mut data = Vec::with_capacity(n * p);
        for i in 0..n {
            data.extend(x.row(i).iter());
        }
        Self { n, p, data }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    // independent lanes let the compiler vectorize the reduction
    const LANES: usize = 8;
    let mut acc = [0.0; LANES];
    let (ha, ta) = a.split_at(a.len() - a.len() % LANES);
    let (hb, tb) = b.split_at(ha.len());
    for (ca, cb) in ha.chunks_exact(LANES).zip(hb.chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += (ca[l] - cb[l]).abs();
        }
    }
    let tail: f64 = ta.iter().zip(tb).map(|(x, y)| (x - y).abs()).sum();
    acc.iter().sum::<f64>() + tail
}

/// K×p medians stored row-major.
fn centers_row_major(medians: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(medians.len());
    for k in 0..medians.nrows() {
        out.extend(medians.row(k).iter());
    }
    out
}

/// Assigns each row to its nearest center (L1 on `support`), lowest index
/// on ties. Returns labels and the distance to the assigned center.
fn assign(rows: &Rows, centers: &[f64], k: usize, support: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let p = rows.p;
    let q = support.len();
    let full = q == p;
    // centers restricted to the support, stored contiguously
    let packed: Vec<f64> = if full {
        Vec::new()
    } else {
        (0..k).flat_map(|c| support.iter().map(move |&j| centers[c * p + j])).collect()
    };
    let mut buf = vec![0.0; q];
    let mut labels = vec![0; rows.n];
    let mut dist = vec![0.0; rows.n];
    for i in 0..rows.n {
        let row = if full {
            rows.row(i)
        } else {
            let r = rows.row(i);
            for (b, &j) in buf.iter_mut().zip(support) {
                *b = r[j];
            }
            &buf[..]
        };
        let cs = if full { centers } else { &packed[..] };
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for c in 0..k {
            let d = l1(row, &cs[c * q..(c + 1) * q]);
            if d < best {
                best = d;
                arg = c;
            }
        }
        labels[i] = arg;
        dist[i] = best;
    }
    (labels, dist)
}

/// Moves the farthest observation into each empty cluster.
fn repair_empty(labels: &mut [usize], dist: &mut [f64], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let donor = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
        let Some(i) = donor else {
            return;
        };
        labels[i] = empty;
        dist[i] = 0.0;
    }
}

/// Data prepared once for repeated fits: a row-major copy, each column's
/// ascending sort order and the overall coordinate-wise medians.
struct Prepared<'a> {
    x: &'a DMatrix<f64>,
    rows: Rows,
    order: Vec<u32>,
    overall: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(x: &'a DMatrix<f64>) -> Self {
        let (n, p) = x.shape();
        let mut order = Vec::with_capacity(n * p);
        let mut idx: Vec<u32> = Vec::with_capacity(n);
        for col in x.column_iter() {
            idx.clear();
            idx.extend(0..n as u32);
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            order.extend_from_slice(&idx);
        }
        Self {
            x,
            rows: Rows::new(x),
            order,
            overall: column_medians(x),
        }
    }

    /// Coordinate-wise medians of each cluster from one ordered pass per
    /// column. Empty clusters keep `fallback`.
    fn cluster_medians(&self, labels: &[usize], k: usize, fallback: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, p) = self.x.shape();
        let mut counts = vec![0usize; k];
        for &l in labels {
            counts[l] += 1;
        }
        // lower and upper middle ranks; they coincide for odd counts
        let lo: Vec<usize> = counts.iter().map(|&c| c.saturating_sub(1) / 2).collect();
        let hi: Vec<usize> = counts.iter().map(|&c| c / 2).collect();
        let mut out = fallback.clone();
        let mut seen = vec![0usize; k];
        let mut lo_val = vec![0.0; k];
        for j in 0..p {
            let col = self.x.column(j);
            seen.iter_mut().for_each(|s| *s = 0);
            let mut pending = counts.iter().filter(|&&c| c > 0).count();
            for &i in &self.order[j * n..(j + 1) * n] {
                let i = i as usize;
                let c = labels[i];
                let r = seen[c];
                seen[c] += 1;
                if r == lo[c] {
                    lo_val[c] = col[i];
                }
                if r == hi[c] {
                    out[(c, j)] = 0.5 * (lo_val[c] + col[i]);
                    pending -= 1;
                    if pending == 0 {
                        break;
                    }
                }
            }
        }
        out
    }
}

/// L1 objective of a labeling against given medians, restricted to `support`.
fn labeled_objective(rows: &Rows, medians: &[f64], labels: &[usize], support: &[usize]) -> f64 {
    let p = rows.p;
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let (row, center) = (rows.row(i), &medians[c * p..(c + 1) * p]);
            support.iter().map(|&j| (row[j] - center[j]).abs()).sum::<f64>()
        })
        .sum()
}

fn between_dispersion(medians: &DMatrix<f64>, labels: &[usize], overall: &[f64], support: &[usize]) -> f64 {
    let mut counts = vec![0usize; medians.nrows()];
    for &l in labels {
        counts[l] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(c, &nk)| {
            nk as f64 * support.iter().map(|&j| (medians[(c, j)] - overall[j]).abs()).sum::<f64>()
        })
        .sum()
}

fn single_start(
    data: &Prepared,
    k: usize,
    tau: f64,
    max_iter: usize,
    initial: DMatrix<f64>,
) -> (DMatrix<f64>, Vec<usize>, Vec<f64>, usize) {
    let mut medians = initial;
    let mut labels: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let (_, support) = dispersion_and_support(&medians, tau);
        let centers = centers_row_major(&medians);
        let (mut new_labels, mut dist) = assign(&data.rows, &centers, k, &support);
        repair_empty(&mut new_labels, &mut dist, k);
        if new_labels == labels {
            break;
        }
        labels = new_labels;
        medians = data.cluster_medians(&labels, k, &medians);
        trace.push(labeled_objective(&data.rows, &centers_row_major(&medians), &labels, &support));
    }
    (medians, labels, trace, iterations)
}

/// Sparse K-median fit at threshold `tau`, best of `starts` random starts by
/// the L1 objective.
pub fn kmedian_fit_at_tau(
    x: &DMatrix<f64>,
    k: usize,
    tau: f64,
    starts: usize,
    max_iter: usize,
    seed: u64,
) -> Result<KMedianState> {
    check_fit_args(x, k)?;
    Ok(fit_prepared(&Prepared::new(x), k, tau, starts, max_iter, seed))
}

fn check_fit_args(x: &DMatrix<f64>, k: usize) -> Result<()> {
    let (n, p) = x.shape();
    if k == 0 || p == 0 {
        return Err(GemError::InvalidInput("need k >= 1 and p >= 1".into()));
    }
    if k > n {
        return Err(GemError::Infeasible { k, n });
    }
    Ok(())
}

fn fit_prepared(data: &Prepared, k: usize, tau: f64, starts: usize, max_iter: usize, seed: u64) -> KMedianState {
    let (n, p) = data.x.shape();
    let mut best: Option<KMedianState> = None;
    for s in 0..starts.max(1) {
        let mut rng = rng::stream(seed, &[PURPOSE_KMEDIAN_FIT, s as u64]);
        let picks = sample(&mut rng, n, k);
        let initial = DMatrix::from_fn(k, p, |c, j| data.x[(picks.index(c), j)]);
        let (medians, labels, trace, iterations) = single_start(data, k, tau, max_iter, initial);
        let (_, support) = dispersion_and_support(&medians, tau);
        let centers = centers_row_major(&medians);
        let obj = assign(&data.rows, &centers, k, &support).1.iter().sum();
        let between = between_dispersion(&medians, &labels, &data.overall, &support);
        let candidate = KMedianState {
            medians,
            labels,
            active_set: support,
            objective: obj,
            between_dispersion: between,
            objective_trace: trace,
            iterations,
        };
        if best.as_ref().is_none_or(|b| candidate.objective < b.objective) {
            best = Some(candidate);
        }
    }
    best.expect("at least one start")
}

/// Independently permutes the entries of every column.
pub fn permute_columns(x: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
    use rand::seq::SliceRandom;
    let mut rng = rng::stream(seed, &[PURPOSE_PERMUTE]);
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        col.as_mut_slice().shuffle(&mut rng);
    }
    out
}

/// Score of one threshold candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct TauScore {
    pub tau: f64,
    /// `log B_tau - mean_b log B_tau,b`; `-inf` when any dispersion is zero.
    pub score: f64,
    pub state: KMedianState,
}

/// Scores each threshold in `grid` against `permutations` column-permuted
/// references.
pub fn score_tau_grid(
    x: &DMatrix<f64>,
    k: usize,
    grid: &[f64],
    permutations: usize,
    starts: usize,
    max_iter: usize,
    seed: u64,
) -> Result<Vec<TauScore>> {
    if grid.is_empty() {
        return Err(GemError::InvalidInput("threshold grid is empty".into()));
    }
    if permutations == 0 {
        return Err(GemError::InvalidInput("need at least one permutation".into()));
    }
    check_fit_args(x, k)?;
    let references: Vec<DMatrix<f64>> = (0..permutations)
        .map(|b| permute_columns(x, rng::derive_seed(seed, &[PURPOSE_PERMUTE, b as u64])))
        .collect();
    let data = Prepared::new(x);
    let prepared: Vec<Prepared> = references.iter().map(Prepared::new).collect();
    grid.par_iter()
        .enumerate()
        .map(|(t, &tau)| {
            let fit_seed = |b: u64| rng::derive_seed(seed, &[PURPOSE_KMEDIAN_FIT, t as u64, b]);
            let state = fit_prepared(&data, k, tau, starts, max_iter, fit_seed(0));
            let mut log_ref = 0.0;
            let mut degenerate = !(state.between_dispersion > 0.0);
            for (b, xr) in prepared.iter().enumerate() {
                let r = fit_prepared(xr, k, tau, starts, max_iter, fit_seed(b as u64 + 1));
                if r.between_dispersion > 0.0 {
                    log_ref += r.between_dispersion.ln();
                } else {
                    degenerate = true;
                }
            }
            let score = if degenerate {
                f64::NEG_INFINITY
            } else {
                state.between_dispersion.ln() - log_ref / permutations as f64
            };
            Ok(TauScore { tau, score, state })
        })
        .collect()
}

/// Index of the best score; ties (and all-degenerate grids) go to the
/// smallest threshold.
fn best_tau_index(scores: &[TauScore]) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].tau.total_cmp(&scores[b].tau));
    let mut best = order[0];
    for &i in &order[1..] {
        if scores[i].score > scores[best].score {
            best = i;
        }
    }
    best
}

/// Threshold maximizing the permutation log-gap over `grid`.
pub fn permutation_select_tau(
    x: &DMatrix<f64>,
    k: usize,
    grid: &[f64],
    permutations: usize,
    seed: u64,
    cfg: &InitConfig,
) -> Result<f64> {
    let scores = score_tau_grid(x, k, grid, permutations, cfg.starts, cfg.max_iter, seed)?;
    Ok(scores[best_tau_index(&scores)].tau)
}

/// Linear-interpolation sample quantile (type 7) of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Threshold grid: zero plus the configured quantiles of the positive
/// coordinate dispersions.
pub fn tau_grid(dispersion: &[f64], quantiles: &[f64]) -> Vec<f64> {
    let mut positive: Vec<f64> = dispersion.iter().copied().filter(|&d| d > 0.0).collect();
    positive.sort_by(f64::total_cmp);
    let mut grid = vec![0.0];
    if !positive.is_empty() {
        grid.extend(quantiles.iter().map(|&q| quantile_sorted(&positive, q)));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Sparse K-median initialization: threshold grid from the dispersions of
/// an unthresholded fit, permutation selection, refit at the selected
/// threshold.
pub fn initialize(x: &DMatrix<f64>, k: usize, cfg: &InitConfig, seed: u64) -> Result<InitResult> {
    cfg.validate()?;
    let base = kmedian_fit_at_tau(
        x,
        k,
        0.0,
        cfg.starts,
        cfg.max_iter,
        rng::derive_seed(seed, &[PURPOSE_KMEDIAN_FIT, u64::MAX]),
    )?;
    let (state, tau, grid) = if k == 1 {
        (base, 0.0, vec![0.0])
    } else {
        let (dispersion, _) = dispersion_and_support(&base.medians, 0.0);
        let grid = tau_grid(&dispersion, &cfg.quantiles);
        let mut scores = score_tau_grid(x, k, &grid, cfg.permutations, cfg.starts, cfg.max_iter, seed)?;
        let best = best_tau_index(&scores);
        let chosen = scores.swap_remove(best);
        (chosen.state, chosen.tau, grid)
    };
    let hard_resp = Responsibilities::from_labels(&state.labels, k)?;
    Ok(InitResult {
        centers: state.medians.clone(),
        hard_resp,
        labels: state.labels.clone(),
        tau,
        tau_grid: grid,
        state,
    })
}
