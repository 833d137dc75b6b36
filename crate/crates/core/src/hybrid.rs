//! Stage-2 plug-in pruning for extreme budgets: CLS-mass top-k gating
//! followed by iterative bipartite redundancy removal.
//!
//! Both steps reuse the cumulative matrix from the trigger depth; nothing is
//! recomputed at another layer.

use serde::{Deserialize, Serialize};

use crate::attnio::AttentionStack;
use crate::error::{Error, Result};
use crate::matrix::{row_distance, FeatureMatrix, TransitionMatrix};
use crate::pipeline::{run_pipeline, Anchor, Mode, PipelineConfig, ReduceConfig};
use crate::reduce::ReducedTokenSet;
use crate::walk::WalkConfig;

/// Survivors above `TOPK_MULTIPLIER * target` are first gated by CLS mass.
pub const TOPK_MULTIPLIER: usize = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedundancyMetric {
    /// Row distance in the cumulative matrix (same kernel as the anchor distances).
    #[default]
    Diffusion,
    /// `1 - cos` between token features; ablation only.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub target: usize,
    /// Tokens removed per round; `None` picks `max(1, |S| / 8)`.
    pub removal_batch: Option<usize>,
    pub metric: RedundancyMetric,
}

impl HybridConfig {
    pub fn new(target: usize) -> Self {
        Self {
            target,
            removal_batch: None,
            metric: RedundancyMetric::Diffusion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target == 0 {
            return Err(Error::Config("hybrid target must be >= 1".into()));
        }
        if self.removal_batch == Some(0) {
            return Err(Error::Config("removal batch must be >= 1".into()));
        }
        Ok(())
    }

    pub fn topk_limit(&self) -> usize {
        TOPK_MULTIPLIER * self.target
    }

    pub fn batch_for(&self, survivors: usize) -> usize {
        self.removal_batch.unwrap_or((survivors / 8).max(1))
    }
}

/// Keeps the `limit` survivors with the most CLS-row mass in `p`.
///
/// Ties go to the lower index. Output is ascending by index.
pub fn cls_topk_filter(survivors: &[usize], p: &TransitionMatrix, limit: usize) -> Vec<usize> {
    let mut kept = survivors.to_vec();
    if kept.len() > limit {
        let cls = p.row(0);
        kept.sort_by(|&a, &b| cls[b].total_cmp(&cls[a]).then(a.cmp(&b)));
        kept.truncate(limit);
    }
    kept.sort_unstable();
    kept
}

/// Pairwise token dissimilarity used for redundancy scoring.
#[derive(Debug, Clone, Copy)]
pub enum PairMetric<'a> {
    Diffusion(&'a TransitionMatrix),
    Cosine(&'a FeatureMatrix),
}

impl PairMetric<'_> {
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        match self {
            PairMetric::Diffusion(p) => row_distance(p, a, b),
            PairMetric::Cosine(f) => cosine_distance(f.row(a), f.row(b)),
        }
    }

    fn tokens(&self) -> usize {
        match self {
            PairMetric::Diffusion(p) => p.n(),
            PairMetric::Cosine(f) => f.rows(),
        }
    }
}

/// `1 - cos(a, b)`; a zero vector is treated as orthogonal to everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na * nb)
}

/// One round of bipartite removal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemovalStep {
    pub iteration: usize,
    pub removed: Vec<usize>,
    /// Score (closest distance into the even group) of each removed token.
    pub scores: Vec<f64>,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneOutcome {
    /// Ascending by index.
    pub survivors: Vec<usize>,
    pub steps: Vec<RemovalStep>,
}

/// Bipartite pruning with the diffusion metric.
pub fn bipartite_prune(
    survivors: &[usize],
    p: &TransitionMatrix,
    cfg: &HybridConfig,
) -> Result<PruneOutcome> {
    bipartite_prune_with(survivors, PairMetric::Diffusion(p), cfg)
}

/// Shrinks `survivors` to exactly `cfg.target` tokens.
///
/// Each round splits the current set (ascending index order) into even and odd
/// positions, scores every odd-position token by its smallest distance to an
/// even-position token, and drops the lowest-scoring ones (ties: lower index
/// first). Even-position tokens are never removed in the round that scored them.
pub fn bipartite_prune_with(
    survivors: &[usize],
    metric: PairMetric<'_>,
    cfg: &HybridConfig,
) -> Result<PruneOutcome> {
    cfg.validate()?;
    let mut set = survivors.to_vec();
    set.sort_unstable();
    set.dedup();
    if let Some(&bad) = set.iter().find(|&&t| t >= metric.tokens()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            n: metric.tokens(),
        });
    }
    if set.len() < cfg.target {
        return Err(Error::TargetExceedsInput {
            target: cfg.target,
            available: set.len(),
        });
    }

    let batch = cfg.batch_for(set.len());
    let mut to_remove = set.len() - cfg.target;
    let mut steps = Vec::new();
    while to_remove > 0 {
        let group_a: Vec<usize> = set.iter().copied().step_by(2).collect();
        let mut scored: Vec<(f64, usize)> = set
            .iter()
            .copied()
            .skip(1)
            .step_by(2)
            .map(|b| {
                let score = group_a
                    .iter()
                    .map(|&a| metric.distance(a, b))
                    .fold(f64::INFINITY, f64::min);
                (score, b)
            })
            .collect();
        scored.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let take = batch.min(to_remove).min(scored.len());
        let removed: Vec<(f64, usize)> = scored.into_iter().take(take).collect();
        set.retain(|t| !removed.iter().any(|&(_, r)| r == *t));
        to_remove -= take;
        steps.push(RemovalStep {
            iteration: steps.len() + 1,
            removed: removed.iter().map(|&(_, t)| t).collect(),
            scores: removed.iter().map(|&(s, _)| s).collect(),
            remaining: set.len(),
        });
    }
    Ok(PruneOutcome {
        survivors: set,
        steps,
    })
}

/// Full pipeline with Stage-2 pruning: walk, sink, distances, clustering,
/// background pooling, CLS top-k, bipartite pruning, assembly.
pub fn run_hybrid(
    stack: &AttentionStack,
    walk: &WalkConfig,
    reduce: &ReduceConfig,
    hybrid: &HybridConfig,
) -> Result<ReducedTokenSet> {
    let cfg = PipelineConfig {
        mode: Mode::Hybrid,
        walk: *walk,
        reduce: *reduce,
        hybrid: Some(*hybrid),
        anchor: Anchor::Sink,
    };
    let out = run_pipeline(stack, &cfg)?;
    out.reduced
        .ok_or_else(|| Error::Config("hybrid run produced no token set".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(rows: &[&[f64]]) -> TransitionMatrix {
        TransitionMatrix::from_rows(rows.len(), rows.concat()).unwrap()
    }

    #[test]
    fn topk_gate_not_tripped() {
        let p = TransitionMatrix::uniform(12);
        let s: Vec<usize> = (1..11).collect();
        assert_eq!(cls_topk_filter(&s, &p, 30), s);
    }

    #[test]
    fn topk_keeps_heaviest() {
        let cls = [0.04, 0.01, 0.30, 0.02, 0.25, 0.05, 0.20, 0.03];
        let mut data = cls.to_vec();
        data.extend(std::iter::repeat_n(0.125, 8 * 7));
        let p = TransitionMatrix::from_rows(8, data).unwrap();
        let kept = cls_topk_filter(&[1, 2, 3, 4, 5, 6, 7], &p, 3);
        assert_eq!(kept, vec![2, 4, 6]);
    }

    #[test]
    fn topk_ties_keep_lowest_indices() {
        let p = TransitionMatrix::uniform(9);
        assert_eq!(cls_topk_filter(&[8, 3, 5, 1, 2], &p, 3), vec![1, 2, 3]);
    }

    #[test]
    fn prune_at_target_is_identity() {
        let p = TransitionMatrix::identity(5);
        let out = bipartite_prune(&[1, 2, 3], &p, &HybridConfig::new(3)).unwrap();
        assert_eq!(out.survivors, vec![1, 2, 3]);
        assert!(out.steps.is_empty());
    }

    #[test]
    fn prune_removes_odd_duplicate() {
        // tokens 1..=4; rows of tokens 3 and 4 are identical.
        // positions: 1->A, 2->B, 3->A, 4->B; token 4 scores 0 against token 3.
        let p = rows(&[
            &[1.0, 0.0, 0.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0, 0.0, 0.0],
            &[0.0, 0.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 0.5, 0.5],
            &[0.0, 0.0, 0.0, 0.5, 0.5],
        ]);
        let cfg = HybridConfig {
            target: 3,
            removal_batch: Some(1),
            metric: RedundancyMetric::Diffusion,
        };
        let out = bipartite_prune(&[1, 2, 3, 4], &p, &cfg).unwrap();
        assert_eq!(out.survivors, vec![1, 2, 3]);
        assert_eq!(out.steps[0].removed, vec![4]);
        assert_eq!(out.steps[0].scores, vec![0.0]);

        // brute-force scores for the odd group
        let score = |b: usize| {
            [1usize, 3]
                .iter()
                .map(|&a| row_distance(&p, a, b))
                .fold(f64::INFINITY, f64::min)
        };
        assert!(score(4) < score(2));
    }

    #[test]
    fn prune_quota_hand_trace() {
        let p = TransitionMatrix::identity(7);
        let cfg = HybridConfig {
            target: 2,
            removal_batch: Some(2),
            metric: RedundancyMetric::Diffusion,
        };
        let out = bipartite_prune(&[1, 2, 3, 4, 5, 6], &p, &cfg).unwrap();
        assert_eq!(out.survivors.len(), 2);
        assert_eq!(out.steps.len(), 2);
        assert_eq!(out.steps[0].remaining, 4);
    }

    #[test]
    fn batch_larger_than_odd_group() {
        let p = TransitionMatrix::identity(8);
        let cfg = HybridConfig {
            target: 1,
            removal_batch: Some(100),
            metric: RedundancyMetric::Diffusion,
        };
        let out = bipartite_prune(&[1, 2, 3, 4, 5, 6, 7], &p, &cfg).unwrap();
        assert_eq!(out.survivors.len(), 1);
    }

    #[test]
    fn target_exceeds_input() {
        let p = TransitionMatrix::identity(4);
        assert!(matches!(
            bipartite_prune(&[1, 2], &p, &HybridConfig::new(3)),
            Err(Error::TargetExceedsInput {
                target: 3,
                available: 2
            })
        ));
    }

    #[test]
    fn cosine_metric_basics() {
        assert!(cosine_distance(&[1.0, 0.0], &[2.0, 0.0]).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 1.0]), 1.0);
    }

    #[test]
    fn default_batch_is_an_eighth() {
        let cfg = HybridConfig::new(4);
        assert_eq!(cfg.batch_for(64), 8);
        assert_eq!(cfg.batch_for(5), 1);
        assert_eq!(cfg.topk_limit(), 12);
    }
}
