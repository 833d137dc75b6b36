//! Radial clustering around the anchor, background pooling, stride sampling
//! and final assembly of the reduced token list.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DistanceField;
use crate::matrix::FeatureMatrix;

/// Patch tokens binned into `k` level sets by normalized anchor distance.
///
/// Clusters `0..p` form the background, `p..k` the foreground.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    k: usize,
    p: usize,
    /// `labels[i - 1]` is the cluster of token `i`.
    labels: Vec<usize>,
    /// Token indices per cluster, ascending.
    members: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    pub fn from_labels(k: usize, p: usize, labels: Vec<usize>) -> Result<Self> {
        check_counts(k, p)?;
        let mut members = vec![Vec::new(); k];
        for (pos, &label) in labels.iter().enumerate() {
            if label >= k {
                return Err(Error::IndexOutOfRange { index: label, n: k });
            }
            members[label].push(pos + 1);
        }
        Ok(Self {
            k,
            p,
            labels,
            members,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_of(&self, token: usize) -> usize {
        self.labels[token - 1]
    }

    pub fn members(&self, cluster: usize) -> &[usize] {
        &self.members[cluster]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// Tokens in clusters `0..p`, ascending.
    pub fn background(&self) -> Vec<usize> {
        let mut bg: Vec<usize> = self.members[..self.p].concat();
        bg.sort_unstable();
        bg
    }

    /// Tokens in clusters `p..k`, ascending.
    pub fn foreground(&self) -> Vec<usize> {
        let mut fg: Vec<usize> = self.members[self.p..].concat();
        fg.sort_unstable();
        fg
    }

    pub fn foreground_len(&self) -> usize {
        self.members[self.p..].iter().map(Vec::len).sum()
    }
}

fn check_counts(k: usize, p: usize) -> Result<()> {
    if k < 2 || p < 1 || p >= k {
        return Err(Error::BadClusterCounts { k, p });
    }
    Ok(())
}

/// `clamp(floor(normalized * k), 0, k - 1)` for every patch token.
///
/// Tokens at the maximum raw distance always go to cluster `k - 1` unless the
/// field is flat; the `+1e-6` guard would otherwise pull them down when the
/// distance range is below `(k - 1) * 1e-6`.
pub fn radial_cluster(field: &DistanceField, k: usize, p: usize) -> Result<ClusterAssignment> {
    check_counts(k, p)?;
    let spread = field.d_max() > field.d_min();
    let labels = field
        .normalized()
        .iter()
        .zip(field.raw())
        .map(|(&d, &raw)| {
            if spread && raw == field.d_max() {
                k - 1
            } else {
                ((d * k as f64).floor().max(0.0) as usize).min(k - 1)
            }
        })
        .collect();
    ClusterAssignment::from_labels(k, p, labels)
}

/// The background collapsed into one feature vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledBackground {
    pub feature: Vec<f64>,
    pub members: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Softmax-of-raw-distance weighted mean of background features.
///
/// Farther tokens weigh more. The exponent uses raw distances, not the
/// normalized ones used for binning.
pub fn transition_weight_pool(
    assignment: &ClusterAssignment,
    field: &DistanceField,
    features: &FeatureMatrix,
) -> Result<PooledBackground> {
    let members = assignment.background();
    if members.is_empty() {
        return Err(Error::EmptyBackground);
    }
    if features.rows() != field.tokens() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows for {} tokens",
            features.rows(),
            field.tokens()
        )));
    }
    let peak = members
        .iter()
        .map(|&i| field.raw_of(i))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = members
        .iter()
        .map(|&i| (field.raw_of(i) - peak).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let mut feature = vec![0.0; features.dim()];
    for (&i, &w) in members.iter().zip(&weights) {
        for (acc, &f) in feature.iter_mut().zip(features.row(i)) {
            *acc += w * f;
        }
    }
    Ok(PooledBackground {
        feature,
        members,
        weights,
    })
}

/// What to do when stride sampling overshoots the budget.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetPolicy {
    /// Trim the sampled set back to the budget, dropping the most
    /// anchor-proximal survivors first.
    #[default]
    Strict,
    /// Keep whatever the greedy pass produced, overshoot included.
    Literal,
}

/// Greedy stride sampling over foreground clusters, nearest cluster first.
///
/// Returns survivors grouped by cluster (`p..k`), ascending index inside each group.
/// When the foreground already fits the budget it is returned whole.
pub fn stride_sample(
    assignment: &ClusterAssignment,
    field: &DistanceField,
    budget: usize,
    policy: BudgetPolicy,
) -> Result<Vec<usize>> {
    if budget == 0 {
        return Err(Error::Config("stride budget must be >= 1".into()));
    }
    if assignment.labels.len() + 1 != field.tokens() {
        return Err(Error::LengthMismatch {
            left: assignment.labels.len() + 1,
            right: field.tokens(),
        });
    }
    let fg_len = assignment.foreground_len();
    let clusters = &assignment.members[assignment.p..];
    if fg_len <= budget {
        return Ok(clusters.concat());
    }

    let mut runs: Vec<Vec<usize>> = vec![Vec::new(); clusters.len()];
    let mut taken = 0;
    for (c, members) in clusters.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut sorted = members.clone();
        sorted.sort_by(|&a, &b| {
            field
                .normalized_of(a)
                .total_cmp(&field.normalized_of(b))
                .then(a.cmp(&b))
        });
        let quota = budget * members.len() / fg_len;
        // a zero quota has no defined stride; keep the whole cluster
        let stride = members.len().checked_div(quota).map_or(1, |s| s.max(1));
        runs[c] = sorted.into_iter().step_by(stride).collect();
        taken += runs[c].len();
        if taken >= budget {
            for (rest, members) in runs.iter_mut().zip(clusters).skip(c + 1) {
                *rest = members.clone();
            }
            break;
        }
    }

    if policy == BudgetPolicy::Strict {
        let total: usize = runs.iter().map(Vec::len).sum();
        if total > budget {
            let mut ranked: Vec<usize> = runs.concat();
            ranked.sort_by(|&a, &b| {
                field
                    .normalized_of(b)
                    .total_cmp(&field.normalized_of(a))
                    .then(a.cmp(&b))
            });
            let mut keep = vec![false; field.tokens()];
            for &t in &ranked[..budget] {
                keep[t] = true;
            }
            runs.iter_mut().for_each(|run| run.retain(|&t| keep[t]));
        }
    }

    for run in runs.iter_mut() {
        run.sort_unstable();
    }
    Ok(runs.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Cls,
    Survivor { index: usize },
    PooledBackground { members: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedToken {
    pub provenance: Provenance,
    pub feature: Vec<f64>,
}

/// `[cls] ‖ survivors ‖ [pooled]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedTokenSet {
    tokens: Vec<ReducedToken>,
    budget_used: usize,
}

impl ReducedTokenSet {
    pub fn tokens(&self) -> &[ReducedToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Output tokens, CLS and pooled included.
    pub fn budget_used(&self) -> usize {
        self.budget_used
    }

    /// Original indices of the survivor entries, in output order.
    pub fn survivor_indices(&self) -> Vec<usize> {
        self.tokens
            .iter()
            .filter_map(|t| match t.provenance {
                Provenance::Survivor { index } => Some(index),
                _ => None,
            })
            .collect()
    }

    pub fn pooled(&self) -> Option<&ReducedToken> {
        self.tokens
            .last()
            .filter(|t| matches!(t.provenance, Provenance::PooledBackground { .. }))
    }
}

/// Builds the output list. `pooled` is `None` only when the background is dropped.
pub fn assemble(
    cls: Vec<f64>,
    survivors: Vec<(usize, Vec<f64>)>,
    pooled: Option<PooledBackground>,
) -> ReducedTokenSet {
    let mut tokens = Vec::with_capacity(survivors.len() + 2);
    tokens.push(ReducedToken {
        provenance: Provenance::Cls,
        feature: cls,
    });
    tokens.extend(survivors.into_iter().map(|(index, feature)| ReducedToken {
        provenance: Provenance::Survivor { index },
        feature,
    }));
    if let Some(bg) = pooled {
        tokens.push(ReducedToken {
            provenance: Provenance::PooledBackground {
                members: bg.members,
            },
            feature: bg.feature,
        });
    }
    let budget_used = tokens.len();
    ReducedTokenSet {
        tokens,
        budget_used,
    }
}

/// Fate of each original token, for visualization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenFate {
    Keep,
    Pool,
    Drop,
}

impl TokenFate {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenFate::Keep => "keep",
            TokenFate::Pool => "pool",
            TokenFate::Drop => "drop",
        }
    }
}

/// N-length mask; CLS is always kept.
pub fn token_mask(n: usize, survivors: &[usize], pooled: &[usize]) -> Vec<TokenFate> {
    let mut mask = vec![TokenFate::Drop; n];
    mask[0] = TokenFate::Keep;
    for &i in pooled {
        mask[i] = TokenFate::Pool;
    }
    for &i in survivors {
        mask[i] = TokenFate::Keep;
    }
    mask
}
