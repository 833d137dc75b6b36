//! Dense row-major matrices used throughout the pipeline.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// An `n x n` row-stochastic matrix stored row-major in `f64`.
///
/// Holds either a single lazified layer map or a cumulative product of them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionMatrix {
    n: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    /// Builds a matrix from raw rows, dividing every row by its sum.
    ///
    /// Entries must be finite and nonnegative, and every row needs positive mass.
    pub fn from_rows(n: usize, mut data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "expected {} entries for n={n}, got {}",
                n * n,
                data.len()
            )));
        }
        for (row, chunk) in data.chunks_mut(n).enumerate() {
            let mut sum = 0.0;
            for (col, &v) in chunk.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite("transition matrix"));
                }
                if v < 0.0 {
                    return Err(Error::NegativeEntry {
                        layer: 0,
                        head: 0,
                        row,
                        col,
                        value: v,
                    });
                }
                sum += v;
            }
            if sum <= 0.0 {
                return Err(Error::NotRowStochastic {
                    layer: 0,
                    head: 0,
                    row,
                    sum,
                });
            }
            chunk.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(Self { n, data })
    }

    /// Wraps data the caller already knows to be row-stochastic.
    pub(crate) fn from_stochastic(n: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            n,
            data: vec![1.0 / n as f64; n * n],
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for row in self.data.chunks(self.n) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.get(i, j)).sum()
    }

    /// Largest `|row_sum - 1|` over all rows.
    pub fn max_row_deviation(&self) -> f64 {
        self.data
            .chunks(self.n)
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_diagonal(&self) -> f64 {
        (0..self.n)
            .map(|i| self.get(i, i))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.n, other.n, "matrix size mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self × rhs`, parallel over output rows.
    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.n, rhs.n, "matrix size mismatch");
        let n = self.n;
        let mut out = vec![0.0; n * n];
        out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
            let lhs_row = self.row(i);
            for (k, &a) in lhs_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        });
        Self { n, data: out }
    }
}

/// Euclidean distance between rows `i` and `j` of `p`.
///
/// This is the one diffusion-distance kernel; both the anchor distances and the
/// redundancy pruning go through it.
#[inline]
pub fn row_distance(p: &TransitionMatrix, i: usize, j: usize) -> f64 {
    p.row(i)
        .iter()
        .zip(p.row(j))
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Per-token feature vectors (`rows x dim`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != rows * dim {
            return Err(Error::ShapeMismatch(format!(
                "feature matrix {rows}x{dim} cannot hold {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}
