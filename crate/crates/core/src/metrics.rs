//! Label-invariant scores and baseline clusterers.

use nalgebra::DMatrix;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::Rng;

use crate::error::{GemError, Result};
use crate::gem::mahalanobis_radii;
use crate::matrix_ops::spd_inverse;
use crate::rng::{self, PURPOSE_KMEANS};
use crate::simdata::SimDesign;

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= k) {
        Some(&l) => Err(GemError::LabelOutOfRange { label: l, k }),
        None => Ok(()),
    }
}

/// `counts[a][b]` = number of observations with estimate `a` and truth `b`.
fn contingency(est: &[usize], truth: &[usize], ka: usize, kb: usize) -> Vec<Vec<u64>> {
    let mut t = vec![vec![0u64; kb]; ka];
    for (&a, &b) in est.iter().zip(truth) {
        t[a][b] += 1;
    }
    t
}

/// Best agreement over all relabelings of `est`, found by optimal
/// assignment on the K×K contingency table.
pub fn accuracy(est: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(GemError::DimensionMismatch {
            expected: truth.len(),
            found: est.len(),
        });
    }
    if est.is_empty() || k == 0 {
        return Err(GemError::InvalidInput("accuracy needs labels and K >= 1".into()));
    }
    check_labels(est, k)?;
    check_labels(truth, k)?;
    let table = contingency(est, truth, k, k);
    let weights = Matrix::from_rows(table.iter().map(|r| r.iter().map(|&c| c as i64).collect::<Vec<_>>()))
        .expect("square contingency table");
    let (matched, _) = kuhn_munkres(&weights);
    Ok(matched as f64 / est.len() as f64)
}

fn choose2(m: u64) -> f64 {
    (m as f64) * (m as f64 - 1.0) / 2.0
}

/// Adjusted Rand index. When the chance-corrected denominator vanishes the
/// result is 1 for identical partitions and 0 otherwise.
pub fn ari(est: &[usize], truth: &[usize]) -> Result<f64> {
    let n = est.len();
    if n != truth.len() {
        return Err(GemError::DimensionMismatch { expected: truth.len(), found: n });
    }
    if n < 2 {
        return Err(GemError::InvalidInput("ARI needs at least two observations".into()));
    }
    let ka = est.iter().max().map_or(0, |m| m + 1);
    let kb = truth.iter().max().map_or(0, |m| m + 1);
    let table = contingency(est, truth, ka, kb);
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|b| choose2(table.iter().map(|r| r[b]).sum())).sum();
    let expected = rows * cols / choose2(n as u64);
    let max_index = 0.5 * (rows + cols);
    let denom = max_index - expected;
    if denom.abs() < 1e-12 {
        return Ok(if same_partition(est, truth) { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut fwd = std::collections::HashMap::new();
    let mut back = std::collections::HashMap::new();
    a.iter().zip(b).all(|(x, y)| *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

/// Lloyd K-means result.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centers: DMatrix<f64>,
    /// Within-cluster sum of squares.
    pub objective: f64,
    /// Objective after every assignment step of the winning start.
    pub trace: Vec<f64>,
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, k: usize) -> f64 {
    (0..x.ncols()).map(|j| (x[(i, j)] - c[(k, j)]).powi(2)).sum()
}

fn kmeans_pp(x: &DMatrix<f64>, k: usize, rng: &mut rng::GemRng) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut centers = DMatrix::zeros(k, p);
    let first = rng.random_range(0..n);
    centers.set_row(0, &x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.set_row(c, &x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, &centers, c));
        }
    }
    centers
}

fn assign(x: &DMatrix<f64>, centers: &DMatrix<f64>) -> (Vec<usize>, Vec<f64>) {
    let k = centers.nrows();
    (0..x.nrows())
        .map(|i| {
            let mut best = (0, sq_dist(x, i, centers, 0));
            for c in 1..k {
                let d = sq_dist(x, i, centers, c);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

fn lloyd(x: &DMatrix<f64>, mut centers: DMatrix<f64>, max_iter: usize) -> KMeansFit {
    let (n, p) = x.shape();
    let k = centers.nrows();
    let mut trace = Vec::new();
    let mut labels = Vec::new();
    let mut dist = Vec::new();
    for _ in 0..max_iter {
        let (new_labels, new_dist) = assign(x, &centers);
        trace.push(new_dist.iter().sum());
        let stable = new_labels == labels;
        labels = new_labels;
        dist = new_dist;
        if stable {
            break;
        }
        let mut sums = DMatrix::<f64>::zeros(k, p);
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for j in 0..p {
                sums[(c, j)] += x[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..p {
                    centers[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            } else {
                // reseed an empty cluster at the point farthest from its center
                let far = (0..n).max_by(|&a, &b| dist[a].total_cmp(&dist[b])).unwrap_or(0);
                centers.set_row(c, &x.row(far));
                dist[far] = 0.0;
            }
        }
    }
    let objective = dist.iter().sum();
    KMeansFit {
        labels,
        centers,
        objective,
        trace,
    }
}

/// Best of `starts` k-means++ seeded Lloyd runs.
pub fn kmeans_baseline(x: &DMatrix<f64>, k: usize, starts: usize, seed: u64) -> Result<KMeansFit> {
    let n = x.nrows();
    if k == 0 || n < k {
        return Err(GemError::Infeasible { k, n });
    }
    let mut best: Option<KMeansFit> = None;
    for s in 0..starts.max(1) {
        let mut r = rng::stream(seed, &[PURPOSE_KMEANS, s as u64]);
        let fit = lloyd(x, kmeans_pp(x, k, &mut r), 100);
        if best.as_ref().is_none_or(|b| fit.objective < b.objective) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Nearest true center in the true Mahalanobis metric, lowest index on
/// ties. Under equal weights and a decreasing generator this is the Bayes
/// rule.
pub fn oracle_classify(x: &DMatrix<f64>, design: &SimDesign) -> Result<Vec<usize>> {
    let omega = spd_inverse(&design.scatter_matrix()?)?;
    let radii = mahalanobis_radii(x, &design.centers()?, &omega)?;
    Ok(radii
        .row_iter()
        .map(|r| {
            let mut best = 0;
            for c in 1..r.len() {
                if r[c] < r[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute_accuracy(est: &[usize], truth: &[usize], k: usize) -> f64 {
        permutations(k)
            .iter()
            .map(|s| est.iter().zip(truth).filter(|(e, t)| s[**e] == **t).count())
            .max()
            .unwrap() as f64
            / est.len() as f64
    }

    /// Pair-counting Rand adjustment straight from the definition.
    fn brute_ari(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut sa, mut sb) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let x = a[i] == a[j];
                let y = b[i] == b[j];
                both += (x && y) as u8 as f64;
                sa += x as u8 as f64;
                sb += y as u8 as f64;
            }
        }
        let pairs = (n * (n - 1) / 2) as f64;
        let expected = sa * sb / pairs;
        let denom = 0.5 * (sa + sb) - expected;
        if denom.abs() < 1e-12 {
            return if same_partition(a, b) { 1.0 } else { 0.0 };
        }
        (both - expected) / denom
    }

    #[test]
    fn accuracy_examples() {
        let truth = [0, 0, 1, 1, 2, 2];
        assert_eq!(accuracy(&truth, &truth, 3).unwrap(), 1.0);
        assert_eq!(accuracy(&[2, 2, 0, 0, 1, 1], &truth, 3).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 0, 1], &[0, 0, 1, 1], 2).unwrap(), 0.75);
        assert!(accuracy(&[0, 3], &[0, 1], 2).is_err());
    }

    #[test]
    fn constant_estimate_scores_largest_share() {
        let truth = [0, 1, 1, 2, 2, 2, 2];
        assert!((accuracy(&[1; 7], &truth, 3).unwrap() - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert!((ari(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(ari(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(ari(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
    }

    fn all_labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|v| (0..k).map(move |l| {
                    let mut w = v.clone();
                    w.push(l);
                    w
                }))
                .collect();
        }
        out
    }

    #[test]
    fn exhaustive_small_labelings() {
        for k in 1..=3 {
            for n in [2, 5] {
                let all = all_labelings(n, k);
                for truth in all.iter().step_by(3) {
                    for est in &all {
                        let a = accuracy(est, truth, k).unwrap();
                        assert!((a - brute_accuracy(est, truth, k)).abs() < 1e-15);
                        let r = ari(est, truth).unwrap();
                        assert!((r - brute_ari(est, truth)).abs() < 1e-12);
                        assert!((r - ari(truth, est).unwrap()).abs() < 1e-12);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn scores_ignore_relabeling(
            est in prop::collection::vec(0usize..4, 2..9),
            seed in 0usize..24,
        ) {
            let truth: Vec<usize> = (0..est.len()).map(|i| (i * 7 + seed) % 4).collect();
            let perm = &permutations(4)[seed];
            let relabeled: Vec<usize> = est.iter().map(|&l| perm[l]).collect();
            prop_assert!((accuracy(&est, &truth, 4).unwrap() - accuracy(&relabeled, &truth, 4).unwrap()).abs() < 1e-15);
            prop_assert!((ari(&est, &truth).unwrap() - ari(&relabeled, &truth).unwrap()).abs() < 1e-12);
            prop_assert!((accuracy(&est, &truth, 4).unwrap() - brute_accuracy(&est, &truth, 4)).abs() < 1e-15);
        }
    }

    #[test]
    fn kmeans_splits_point_masses() {
        let x = DMatrix::from_row_slice(6, 2, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 50.0, 50.0, 50.0, 50.0, 50.0, 50.0]);
        let fit = kmeans_baseline(&x, 2, 3, 1).unwrap();
        assert_eq!(accuracy(&fit.labels, &[0, 0, 0, 1, 1, 1], 2).unwrap(), 1.0);
        assert_eq!(fit.objective, 0.0);
    }

    #[test]
    fn kmeans_objective_never_increases() {
        let mut r = rng::stream(3, &[0]);
        let x = DMatrix::from_fn(120, 4, |i, _| r.random_range(-1.0..1.0) + (i % 3) as f64 * 1.5);
        for seed in 0..5 {
            let fit = kmeans_baseline(&x, 3, 1, seed).unwrap();
            assert!(fit.trace.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{:?}", fit.trace);
        }
    }

    #[test]
    fn duplicated_data_gives_same_centers() {
        let mut r = rng::stream(4, &[0]);
        let x = DMatrix::from_fn(60, 3, |i, _| r.random_range(-1.0..1.0) + if i < 30 { 0.0 } else { 8.0 });
        let doubled = DMatrix::from_fn(120, 3, |i, j| x[(i % 60, j)]);
        let a = kmeans_baseline(&x, 2, 5, 9).unwrap();
        let b = kmeans_baseline(&doubled, 2, 5, 9).unwrap();
        let sort = |c: &DMatrix<f64>| {
            let mut rows: Vec<Vec<f64>> = c.row_iter().map(|r| r.iter().copied().collect()).collect();
            rows.sort_by(|p, q| p[0].total_cmp(&q[0]));
            rows
        };
        for (ra, rb) in sort(&a.centers).iter().zip(sort(&b.centers).iter()) {
            for (u, v) in ra.iter().zip(rb) {
                assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn kmeans_rejects_too_few_points() {
        assert!(kmeans_baseline(&DMatrix::zeros(2, 2), 3, 1, 0).is_err());
    }

    #[test]
    fn oracle_examples() {
        use crate::simdata::{RadialKind, ScatterKind};
        let mut design = SimDesign::standard(RadialKind::Gaussian, 8, 0);
        let centers = design.centers().unwrap();
        assert_eq!(oracle_classify(&centers, &design).unwrap(), vec![0, 1, 2]);
        design.scatter = ScatterKind::Ar(0.0);
        let x = DMatrix::from_row_slice(2, 8, &[1.4, 1.6, 1.2, 0.1, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.2, 1.5, 1.3, 0.0, 0.0, 0.0]);
        let nearest: Vec<usize> = (0..2)
            .map(|i| (0..3).min_by(|&a, &b| (x.row(i) - centers.row(a)).norm().total_cmp(&(x.row(i) - centers.row(b)).norm())).unwrap())
            .collect();
        assert_eq!(oracle_classify(&x, &design).unwrap(), nearest);
    }
}
