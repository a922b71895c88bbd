use nalgebra::DMatrix;

use crate::error::{GemError, Result};

/// n×K row-stochastic posterior weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities(DMatrix<f64>);

impl Responsibilities {
    /// Wraps a matrix after checking entries lie in [0, 1] and rows sum to 1
    /// within `1e-9`.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(GemError::InvalidInput("responsibilities need K >= 1".into()));
        }
        for row in values.row_iter() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(GemError::InvalidInput("responsibility outside [0, 1]".into()));
            }
            if (row.sum() - 1.0).abs() > 1e-9 {
                return Err(GemError::InvalidInput("responsibility row does not sum to 1".into()));
            }
        }
        Ok(Self(values))
    }

    pub(crate) fn new_unchecked(values: DMatrix<f64>) -> Self {
        Self(values)
    }

    /// One-hot rows from zero-based labels.
    pub fn from_labels(labels: &[usize], k: usize) -> Result<Self> {
        let mut m = DMatrix::zeros(labels.len(), k);
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(GemError::LabelOutOfRange { label: l, k });
            }
            m[(i, l)] = 1.0;
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.0[(i, k)]
    }

    /// Column means, i.e. the implied mixing proportions.
    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.0.column_iter().map(|c| c.sum() / n).collect()
    }

    /// Row-wise argmax, lowest index on ties.
    pub fn argmax_labels(&self) -> Vec<usize> {
        self.0
            .row_iter()
            .map(|r| {
                let mut best = 0;
                for k in 1..r.len() {
                    if r[k] > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    /// Reorders columns: column `k` of the result is column `perm[k]` of self.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        Self(DMatrix::from_fn(self.n(), self.k(), |i, k| self.0[(i, perm[k])]))
    }
}
