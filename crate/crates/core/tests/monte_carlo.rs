//! Seeded Monte Carlo checks that need more data than a unit test.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use ellipse_gem::config::{GemConfig, InitConfig, ShapeConfig};
use ellipse_gem::gem::{fit, gem_iterate, initial_model};
use ellipse_gem::matrix_ops::spd_inverse;
use ellipse_gem::metrics::accuracy;
use ellipse_gem::responsibilities::Responsibilities;
use ellipse_gem::shape::shape_block;
use ellipse_gem::simdata::{build_scatter, sample_mixture, MeanKind, RadialKind, ScatterKind, SimDesign};
use ellipse_gem::sparse_kmedian::{initialize, score_tau_grid};

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
}

/// Two spherical Gaussian clusters of equal size whose means differ by
/// `gap` in each of the first `informative` coordinates.
fn two_clusters(seed: u64, n: usize, p: usize, informative: usize, gap: f64) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = normal_matrix(&mut rng, n, p);
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
    for (i, &l) in labels.iter().enumerate() {
        for j in 0..informative {
            x[(i, j)] += if l == 0 { -gap / 2.0 } else { gap / 2.0 };
        }
    }
    (x, labels)
}

fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[test]
fn shape_of_spherical_data_is_near_identity() {
    let (n, p) = (500, 20);
    let cfg = ShapeConfig::default();
    let resp = Responsibilities::from_labels(&vec![0; n], 1).unwrap();
    let close = (0..20u64)
        .filter(|&seed| {
            let x = normal_matrix(&mut ChaCha8Rng::seed_from_u64(seed), n, p);
            let out = shape_block(&x, &resp, &DMatrix::identity(p, p), &cfg).unwrap();
            max_abs(&(out.sigma - DMatrix::<f64>::identity(p, p))) <= 0.15
        })
        .count();
    assert!(close >= 18, "{close}/20 within 0.15");
}

#[test]
fn shape_precision_beats_inverse_sample_covariance() {
    let (n, p) = (300, 50);
    let cfg = ShapeConfig::default();
    let truth = spd_inverse(&build_scatter(ScatterKind::Ar(0.5), p).unwrap()).unwrap();
    let resp = Responsibilities::from_labels(&vec![0; n], 1).unwrap();
    let mut wins = 0;
    for seed in 0..20u64 {
        // zero mean separation leaves one elliptical population
        let design = SimDesign {
            n,
            means: MeanKind::Sparse(0.0),
            ..SimDesign::standard(RadialKind::StudentT(5.0), p, seed)
        };
        let x = sample_mixture(&design).unwrap().x;
        let out = shape_block(&x, &resp, &DMatrix::identity(p, p), &cfg).unwrap();
        let mean = x.row_mean();
        let centered = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let naive = spd_inverse(&cov).unwrap();
        if max_abs(&(&out.omega - &truth)) < max_abs(&(naive - &truth)) {
            wins += 1;
        }
    }
    assert!(wins >= 16, "{wins}/20 wins");
}

#[test]
fn gem_separates_two_gaussian_clusters() {
    // means differ by 6/sqrt(5) per coordinate, so the distance is 6
    let gap = 6.0 / 5f64.sqrt();
    let good = (0..20u64)
        .filter(|&seed| {
            let (x, truth) = two_clusters(1000 + seed, 200, 5, 5, gap);
            let cfg = GemConfig { seed, ..GemConfig::with_k(2) };
            let f = fit(&x, &cfg).unwrap();
            accuracy(&f.labels, &truth, 2).unwrap() >= 0.95
        })
        .count();
    assert!(good >= 18, "{good}/20 seeds reached 0.95");
}

#[test]
fn initializer_recovers_separated_clusters() {
    let cfg = InitConfig::default();
    for seed in 0..20u64 {
        let (x, truth) = two_clusters(2000 + seed, 100, 10, 4, 3.0);
        let init = initialize(&x, 2, &cfg, seed).unwrap();
        let acc = accuracy(&init.labels, &truth, 2).unwrap();
        assert!(acc >= 0.95, "seed {seed}: accuracy {acc}");
        assert_eq!(init.hard_resp.argmax_labels(), init.labels);
    }
}

fn signal_threshold_wins(informative: usize) -> usize {
    let cfg = InitConfig::default();
    (0..50u64)
        .filter(|&seed| {
            let (x, _) = two_clusters(3000 + seed, 100, 10, informative, 4.0);
            let scores = score_tau_grid(&x, 2, &[0.0, 1.5], cfg.permutations, cfg.starts, cfg.max_iter, seed).unwrap();
            scores[1].score > scores[0].score
        })
        .count()
}

#[test]
fn threshold_keeping_the_signal_coordinates_scores_higher() {
    let better = signal_threshold_wins(2);
    assert!(better >= 40, "{better}/50 seeds");
}

// With one informative coordinate the columns are independent, so the
// permuted references share the data's distribution and the comparison is
// close to a coin flip (about 36/50 here).
#[test]
#[ignore = "column permutation cannot separate a single informative coordinate from noise"]
fn threshold_keeping_a_single_signal_coordinate_scores_higher() {
    let better = signal_threshold_wins(1);
    assert!(better >= 40, "{better}/50 seeds");
}

#[test]
fn exact_parameters_are_nearly_fixed() {
    let (half, p) = (200, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = normal_matrix(&mut rng, half, p);
    let mu = DVector::from_vec(vec![2.0, 0.0, 0.0, 0.0]);
    // mirror images keep the sample exactly symmetric about the origin
    let x = DMatrix::from_fn(2 * half, p, |i, j| if i < half { mu[j] + z[(i, j)] } else { -mu[j] - z[(i - half, j)] });
    let labels: Vec<usize> = (0..2 * half).map(|i| usize::from(i >= half)).collect();
    let centers = DMatrix::from_rows(&[mu.transpose(), -mu.transpose()]);
    let cfg = GemConfig::with_k(2);
    let model = initial_model(&x, &centers, &labels, &cfg).unwrap();
    let out = gem_iterate(&x, &model, &cfg).unwrap();
    let steps = out.diagnostics.steps;
    assert!(steps.center <= 0.1, "{steps:?}");
    assert!(steps.precision <= 0.1, "{steps:?}");
    assert!(steps.mixing <= 0.1, "{steps:?}");
}

#[test]
fn model_invariants_hold_along_a_run() {
    let d = SimDesign::standard(RadialKind::StudentT(5.0), 12, 4);
    let x = sample_mixture(&SimDesign { n: 150, ..d }).unwrap().x;
    let cfg = GemConfig { seed: 4, ..GemConfig::with_k(3) };
    let init = initialize(&x, 3, &cfg.init, 4).unwrap();
    let mut model = initial_model(&x, &init.centers, &init.labels, &cfg).unwrap();
    for _ in 0..6 {
        model = gem_iterate(&x, &model, &cfg).unwrap().model;
        model.check(1e-6).unwrap();
        assert!((model.sigma.trace() - 12.0).abs() <= 1e-8);
    }
}

#[test]
fn single_component_keeps_unit_weight() {
    let x = normal_matrix(&mut ChaCha8Rng::seed_from_u64(2), 80, 3);
    let cfg = GemConfig::with_k(1);
    let centers = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 0.0]);
    let mut model = initial_model(&x, &centers, &vec![0; 80], &cfg).unwrap();
    for _ in 0..3 {
        model = gem_iterate(&x, &model, &cfg).unwrap().model;
        assert_eq!(model.pi, vec![1.0]);
        assert!((model.sigma.trace() - 3.0).abs() <= 1e-8);
    }
}
