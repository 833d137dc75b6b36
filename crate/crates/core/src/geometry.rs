//! Token-to-anchor diffusion distances and the weighted-distance cross-check.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{row_distance, TransitionMatrix};

/// Guard added to the normalization denominator.
pub const NORMALIZATION_EPSILON: f64 = 1e-6;
/// Floor applied to the column-mean stationary estimate before renormalizing.
pub const PHI_FLOOR: f64 = 1e-12;

/// Distances from every patch token to the anchor.
///
/// Vectors are indexed by `token - 1`: entry 0 belongs to token 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceField {
    anchor: usize,
    raw: Vec<f64>,
    normalized: Vec<f64>,
    d_min: f64,
    d_max: f64,
    epsilon_norm: f64,
}

impl DistanceField {
    /// Builds a field from raw patch distances (`raw[i - 1]` for token `i`).
    pub fn from_raw(anchor: usize, raw: Vec<f64>) -> Result<Self> {
        if anchor == 0 {
            return Err(Error::SinkIsCls);
        }
        if raw.is_empty() {
            return Err(Error::TooShort(0));
        }
        if anchor > raw.len() {
            return Err(Error::IndexOutOfRange {
                index: anchor,
                n: raw.len() + 1,
            });
        }
        if raw.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::NonFinite("distance field"));
        }
        let d_min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let d_max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom = d_max - d_min + NORMALIZATION_EPSILON;
        let normalized = raw.iter().map(|d| (d - d_min) / denom).collect();
        Ok(Self {
            anchor,
            raw,
            normalized,
            d_min,
            d_max,
            epsilon_norm: NORMALIZATION_EPSILON,
        })
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    /// Total token count including CLS.
    pub fn tokens(&self) -> usize {
        self.raw.len() + 1
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    #[inline]
    pub fn raw_of(&self, token: usize) -> f64 {
        self.raw[token - 1]
    }

    #[inline]
    pub fn normalized_of(&self, token: usize) -> f64 {
        self.normalized[token - 1]
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn epsilon_norm(&self) -> f64 {
        self.epsilon_norm
    }
}

fn check_anchor(p: &TransitionMatrix, anchor: usize) -> Result<()> {
    if anchor == 0 {
        return Err(Error::SinkIsCls);
    }
    if anchor >= p.n() {
        return Err(Error::IndexOutOfRange {
            index: anchor,
            n: p.n(),
        });
    }
    Ok(())
}

/// `‖P[i,·] − P[anchor,·]‖₂` for every patch token, over all N columns. O(N²).
pub fn diffusion_distances(p: &TransitionMatrix, anchor: usize) -> Result<DistanceField> {
    check_anchor(p, anchor)?;
    let raw = (1..p.n()).map(|i| row_distance(p, i, anchor)).collect();
    DistanceField::from_raw(anchor, raw)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryEstimate {
    phi: Vec<f64>,
}

impl StationaryEstimate {
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        if phi.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::DegeneratePhi);
        }
        Ok(Self { phi })
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }
}

/// Column means of `p`, floored at [`PHI_FLOOR`] and renormalized to sum to 1.
pub fn stationary_estimate(p: &TransitionMatrix) -> StationaryEstimate {
    let n = p.n() as f64;
    let mut phi: Vec<f64> = p
        .column_sums()
        .into_iter()
        .map(|s| (s / n).max(PHI_FLOOR))
        .collect();
    let total: f64 = phi.iter().sum();
    phi.iter_mut().for_each(|v| *v /= total);
    StationaryEstimate { phi }
}

/// `sqrt(Σ_k (P[i,k] − P[anchor,k])² / φ(k))` for every patch token.
pub fn weighted_diffusion_distances(
    p: &TransitionMatrix,
    anchor: usize,
    phi: &StationaryEstimate,
) -> Result<Vec<f64>> {
    check_anchor(p, anchor)?;
    if phi.phi.len() != p.n() {
        return Err(Error::LengthMismatch {
            left: phi.phi.len(),
            right: p.n(),
        });
    }
    if phi.phi.iter().any(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::DegeneratePhi);
    }
    let anchor_row = p.row(anchor);
    Ok((1..p.n())
        .map(|i| {
            p.row(i)
                .iter()
                .zip(anchor_row)
                .zip(&phi.phi)
                .map(|((a, b), w)| (a - b) * (a - b) / w)
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman's ρ: Pearson correlation of average ranks.
///
/// Returns 0 when either input is constant (ρ is undefined there).
pub fn spearman_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::TooShort(a.len()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}
