//! Synthetic elliptical mixtures for the simulation designs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};
use crate::matrix_ops::symmetric_sqrt;
use crate::rng::{self, GemRng, PURPOSE_DIRECTIONS, PURPOSE_LABELS, PURPOSE_RADII};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScatterKind {
    /// `ρ^|a-b|`.
    Ar(f64),
    /// Unit diagonal with every off-diagonal entry equal to `ρ`.
    CompoundSymmetric(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RadialKind {
    Gaussian,
    StudentT(f64),
    Laplace,
    Slash(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MeanKind {
    /// Three centers that differ in the first six coordinates only.
    Sparse(f64),
    /// Three centers built from four equal coordinate blocks.
    DenseBlock(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub scatter: ScatterKind,
    pub radial: RadialKind,
    pub means: MeanKind,
    pub seed: u64,
}

impl SimDesign {
    /// Main design: n = 300, K = 3, AR(0.5) scatter, sparse means with δ = 1.5.
    pub fn standard(radial: RadialKind, p: usize, seed: u64) -> Self {
        Self {
            n: 300,
            p,
            k: 3,
            scatter: ScatterKind::Ar(0.5),
            radial,
            means: MeanKind::Sparse(1.5),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(GemError::InvalidInput("n and p must be positive".into()));
        }
        match self.scatter {
            ScatterKind::Ar(r) | ScatterKind::CompoundSymmetric(r) if !(r > -1.0 && r < 1.0) => {
                return Err(GemError::InvalidInput(format!("scatter correlation {r} outside (-1, 1)")));
            }
            _ => {}
        }
        match self.radial {
            RadialKind::StudentT(v) | RadialKind::Slash(v) if !(v > 2.0) => {
                return Err(GemError::InvalidInput(format!("radial degrees of freedom {v} must exceed 2")));
            }
            _ => {}
        }
        build_means(self.means, self.p, self.k).map(|_| ())
    }

    pub fn scatter_matrix(&self) -> Result<DMatrix<f64>> {
        build_scatter(self.scatter, self.p)
    }

    pub fn centers(&self) -> Result<DMatrix<f64>> {
        build_means(self.means, self.p, self.k)
    }
}

pub fn build_scatter(kind: ScatterKind, p: usize) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(GemError::InvalidInput("p must be positive".into()));
    }
    match kind {
        ScatterKind::Ar(r) | ScatterKind::CompoundSymmetric(r) if !(r > -1.0 && r < 1.0) => {
            Err(GemError::InvalidInput(format!("scatter correlation {r} outside (-1, 1)")))
        }
        ScatterKind::Ar(r) => Ok(DMatrix::from_fn(p, p, |a, b| r.powi(a.abs_diff(b) as i32))),
        ScatterKind::CompoundSymmetric(r) => Ok(DMatrix::from_fn(p, p, |a, b| if a == b { 1.0 } else { r })),
    }
}

/// K×p center matrix. Both patterns are defined for three components.
pub fn build_means(kind: MeanKind, p: usize, k: usize) -> Result<DMatrix<f64>> {
    if k != 3 {
        return Err(GemError::InvalidInput(format!("mean designs have three components, got {k}")));
    }
    match kind {
        MeanKind::Sparse(d) => {
            if p < 6 {
                return Err(GemError::InvalidInput("sparse means need p >= 6".into()));
            }
            let mut m = DMatrix::zeros(3, p);
            let patterns: [[f64; 6]; 3] = [
                [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
                [-1.0, 0.0, 0.0, 1.0, 1.0, 0.0],
                [0.0, -1.0, 1.0, -1.0, 0.0, 1.0],
            ];
            for (c, row) in patterns.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    m[(c, j)] = d * v;
                }
            }
            Ok(m)
        }
        MeanKind::DenseBlock(d) => {
            if p % 4 != 0 {
                return Err(GemError::InvalidInput("dense block means need p divisible by 4".into()));
            }
            let q = p / 4;
            let coef: [[f64; 4]; 3] = [[1.5, 0.5, -0.5, -1.5], [-0.5, 1.5, 0.5, -1.5], [0.5, -1.5, 1.5, -0.5]];
            Ok(DMatrix::from_fn(3, p, |c, j| d * coef[c][j / q]))
        }
    }
}

/// One radius draw.
pub fn draw_radius(kind: RadialKind, p: usize, rng: &mut GemRng) -> f64 {
    let q: f64 = ChiSquared::new(p as f64).expect("p is positive").sample(rng);
    match kind {
        RadialKind::Gaussian => q.sqrt(),
        RadialKind::StudentT(nu) => {
            let g: f64 = ChiSquared::new(nu).expect("nu is positive").sample(rng);
            ((nu - 2.0) * q / g).sqrt()
        }
        RadialKind::Laplace => {
            let e: f64 = Exp1.sample(rng);
            (e * q).sqrt()
        }
        RadialKind::Slash(nu) => {
            // 1 - U lies in (0, 1], keeping the power finite
            let v = 1.0 - rng.random::<f64>();
            ((nu - 2.0) / nu).sqrt() * v.powf(-1.0 / nu) * q.sqrt()
        }
    }
}

pub fn sample_radial(kind: RadialKind, p: usize, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, &[PURPOSE_RADII]);
    (0..count).map(|_| draw_radius(kind, p, &mut rng)).collect()
}

/// Uniform direction on the unit sphere from a normalized Gaussian vector.
pub fn draw_direction(p: usize, rng: &mut GemRng) -> DVector<f64> {
    loop {
        let z = DVector::<f64>::from_fn(p, |_, _| StandardNormal.sample(rng));
        let norm = z.norm();
        if norm > 0.0 {
            return z / norm;
        }
    }
}

/// Sampled data with zero-based true labels.
#[derive(Debug, Clone)]
pub struct SimSample {
    pub x: DMatrix<f64>,
    pub labels: Vec<usize>,
}

pub fn sample_mixture(design: &SimDesign) -> Result<SimSample> {
    let (kind, p) = (design.radial, design.p);
    sample_mixture_with(design, |rng| draw_radius(kind, p, rng))
}

/// Mixture sample with a caller-supplied radius law.
pub fn sample_mixture_with(design: &SimDesign, mut radius: impl FnMut(&mut GemRng) -> f64) -> Result<SimSample> {
    design.validate()?;
    let centers = design.centers()?;
    let s = symmetric_sqrt(&design.scatter_matrix()?)?;
    let mut label_rng = rng::stream(design.seed, &[PURPOSE_LABELS]);
    let mut radius_rng = rng::stream(design.seed, &[PURPOSE_RADII]);
    let mut dir_rng = rng::stream(design.seed, &[PURPOSE_DIRECTIONS]);
    let (n, p) = (design.n, design.p);
    let labels: Vec<usize> = (0..n).map(|_| label_rng.random_range(0..design.k)).collect();
    let mut x = DMatrix::zeros(n, p);
    for (i, &c) in labels.iter().enumerate() {
        let r = radius(&mut radius_rng);
        let u = draw_direction(p, &mut dir_rng);
        let v = &s * u * r;
        for j in 0..p {
            x[(i, j)] = centers[(c, j)] + v[j];
        }
    }
    Ok(SimSample { x, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scatter_examples() {
        let ar = build_scatter(ScatterKind::Ar(0.5), 2).unwrap();
        assert_eq!(ar, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let cs = build_scatter(ScatterKind::CompoundSymmetric(0.5), 3).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(cs[(a, b)], if a == b { 1.0 } else { 0.5 });
            }
        }
        assert_eq!(build_scatter(ScatterKind::Ar(0.0), 5).unwrap(), DMatrix::identity(5, 5));
        assert!(build_scatter(ScatterKind::Ar(1.0), 3).is_err());
    }

    #[test]
    fn mean_examples() {
        let m = build_means(MeanKind::Sparse(1.5), 8, 3).unwrap();
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![1.5, 1.5, 1.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, -1.5, 1.5, -1.5, 0.0, 1.5, 0.0, 0.0]);
        let d = build_means(MeanKind::DenseBlock(0.4), 8, 3).unwrap();
        let expected: Vec<f64> = [1.5, 1.5, 0.5, 0.5, -0.5, -0.5, -1.5, -1.5].iter().map(|v| 0.4 * v).collect();
        for j in 0..8 {
            assert_relative_eq!(d[(0, j)], expected[j], epsilon = 1e-15);
        }
        assert!(build_means(MeanKind::Sparse(0.0), 6, 3).unwrap().iter().all(|v| *v == 0.0));
        assert!(build_means(MeanKind::DenseBlock(0.0), 4, 3).unwrap().iter().all(|v| *v == 0.0));
        assert!(build_means(MeanKind::Sparse(1.0), 5, 3).is_err());
        assert!(build_means(MeanKind::DenseBlock(1.0), 10, 3).is_err());
        assert!(build_means(MeanKind::Sparse(1.0), 10, 2).is_err());
    }

    fn mean_sq(kind: RadialKind, p: usize, seed: u64) -> f64 {
        let r = sample_radial(kind, p, 100_000, seed);
        r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
    }

    #[test]
    fn gaussian_second_moment() {
        let p = 10;
        let m = mean_sq(RadialKind::Gaussian, p, 1);
        // three standard errors of a chi-square mean
        assert!((m - p as f64).abs() <= 3.0 * (2.0 * p as f64 / 1e5).sqrt());
    }

    #[test]
    fn heavy_tailed_second_moments() {
        let p = 10.0;
        assert!((mean_sq(RadialKind::StudentT(5.0), 10, 2) - p).abs() <= 0.05 * p);
        assert!((mean_sq(RadialKind::Laplace, 10, 3) - p).abs() <= 0.05 * p);
        assert!((mean_sq(RadialKind::Slash(4.0), 10, 4) - p).abs() <= 0.10 * p);
    }

    #[test]
    fn directions_have_unit_norm() {
        let mut rng = rng::stream(5, &[1]);
        for p in [1, 2, 7, 50] {
            for _ in 0..20 {
                assert!((draw_direction(p, &mut rng).norm() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_radius_puts_rows_on_centers() {
        let design = SimDesign::standard(RadialKind::Gaussian, 10, 3);
        let s = sample_mixture_with(&design, |_| 0.0).unwrap();
        let c = design.centers().unwrap();
        for (i, &l) in s.labels.iter().enumerate() {
            for j in 0..10 {
                assert_eq!(s.x[(i, j)], c[(l, j)]);
            }
        }
    }

    #[test]
    fn large_separation_is_trivially_classified() {
        let mut design = SimDesign::standard(RadialKind::Gaussian, 20, 11);
        design.means = MeanKind::Sparse(20.0);
        design.n = 2000;
        let s = sample_mixture(&design).unwrap();
        let c = design.centers().unwrap();
        let correct = (0..design.n)
            .filter(|&i| {
                let d: Vec<f64> = (0..3).map(|k| (s.x.row(i) - c.row(k)).norm_squared()).collect();
                let best = (0..3).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
                best == s.labels[i]
            })
            .count();
        assert!(correct as f64 / design.n as f64 >= 0.999);
    }

    #[test]
    fn label_frequencies_are_balanced() {
        let mut design = SimDesign::standard(RadialKind::Gaussian, 6, 21);
        design.n = 3000;
        let s = sample_mixture(&design).unwrap();
        let expected = 1000.0;
        let sd = (3000.0_f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for k in 0..3 {
            let count = s.labels.iter().filter(|&&l| l == k).count() as f64;
            assert!((count - expected).abs() <= 3.0 * sd);
        }
    }

    #[test]
    fn sample_covariance_matches_scatter() {
        let (n, p) = (10_000, 5);
        let truth = build_scatter(ScatterKind::Ar(0.5), p).unwrap();
        let root = symmetric_sqrt(&truth).unwrap();
        let mut rng = rng::stream(13, &[0]);
        let mut x = DMatrix::zeros(p, n);
        for i in 0..n {
            let r = draw_radius(RadialKind::Gaussian, p, &mut rng);
            let u = draw_direction(p, &mut rng);
            x.set_column(i, &(&root * u * r));
        }
        let mean = x.column_sum() / n as f64;
        let centered = DMatrix::from_fn(p, n, |j, i| x[(j, i)] - mean[j]);
        let cov = &centered * centered.transpose() / (n as f64 - 1.0);
        assert!((cov - truth).iter().all(|d| d.abs() <= 0.1));
    }

    #[test]
    fn same_seed_same_sample() {
        let design = SimDesign::standard(RadialKind::StudentT(5.0), 12, 99);
        let a = sample_mixture(&design).unwrap();
        let b = sample_mixture(&design).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.labels, b.labels);
    }
}
