//! End-to-end orchestration shared by the CLI and the C ABI.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attnio::AttentionStack;
use crate::error::{Error, Result};
use crate::geometry::{diffusion_distances, DistanceField};
use crate::hybrid::{
    bipartite_prune_with, cls_topk_filter, HybridConfig, PairMetric, RedundancyMetric, RemovalStep,
};
use crate::matrix::FeatureMatrix;
use crate::reduce::{
    assemble, radial_cluster, stride_sample, token_mask, transition_weight_pool, BudgetPolicy,
    ClusterAssignment, PooledBackground, ReducedTokenSet, TokenFate,
};
use crate::sink::{locate_sink, SinkReport};
use crate::walk::{accumulate, WalkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Pool the background into one token, keep (or stride-sample) the foreground.
    Pool,
    /// Same clustering, but the background is dropped instead of pooled.
    Prune,
    /// Pool, then CLS top-k and bipartite pruning down to the budget.
    Hybrid,
    /// Walk, sink and clustering only; no token set is produced.
    ReportOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Anchor {
    Sink,
    /// A uniformly drawn patch token; the ablation baseline.
    Random {
        seed: u64,
    },
}

/// Which layer's features feed pooling and the output tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "layer", rename_all = "snake_case")]
pub enum FeatureLayer {
    /// The layer at the trigger depth (0-based index `t* - 1`).
    #[default]
    Trigger,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReduceConfig {
    pub k: usize,
    pub p: usize,
    /// Foreground budget T; `None` keeps the whole foreground.
    pub budget: Option<usize>,
    pub budget_policy: BudgetPolicy,
    pub feature_layer: FeatureLayer,
}

impl Default for ReduceConfig {
    fn default() -> Self {
        Self {
            k: 6,
            p: 1,
            budget: None,
            budget_policy: BudgetPolicy::Strict,
            feature_layer: FeatureLayer::Trigger,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub walk: WalkConfig,
    pub reduce: ReduceConfig,
    pub hybrid: Option<HybridConfig>,
    pub anchor: Anchor,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Pool,
            walk: WalkConfig::default(),
            reduce: ReduceConfig::default(),
            hybrid: None,
            anchor: Anchor::Sink,
        }
    }
}

impl PipelineConfig {
    /// Checks every knob before any compute happens.
    pub fn validate(&self) -> Result<()> {
        self.walk.validate()?;
        let r = &self.reduce;
        if r.k < 2 || r.p < 1 || r.p >= r.k {
            return Err(Error::BadClusterCounts { k: r.k, p: r.p });
        }
        if r.budget == Some(0) {
            return Err(Error::Config("budget must be >= 1".into()));
        }
        match (self.mode, &self.hybrid) {
            (Mode::Hybrid, None) => {
                return Err(Error::Config("hybrid mode requires a budget".into()))
            }
            (Mode::Hybrid, Some(h)) => h.validate()?,
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub accumulate_ms: f64,
    pub sink_ms: f64,
    pub distances_ms: f64,
    pub cluster_ms: f64,
    pub pool_ms: f64,
    pub sample_ms: f64,
    pub stage2_ms: f64,
    pub assemble_ms: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub sink: SinkReport,
    /// Token the distances were measured from (the sink, or the random draw).
    pub anchor: usize,
    pub column_sum_history: Vec<f64>,
    pub walk_depth: usize,
    pub field: DistanceField,
    pub assignment: ClusterAssignment,
    pub pooled: Option<PooledBackground>,
    /// Surviving patch tokens in output order.
    pub survivors: Vec<usize>,
    /// Whether the foreground exceeded the budget and stride sampling ran.
    pub sampled: bool,
    pub reduced: Option<ReducedTokenSet>,
    pub mask: Vec<TokenFate>,
    pub removal_log: Vec<RemovalStep>,
    pub timings: StageTimings,
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

pub fn run_pipeline(stack: &AttentionStack, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut timings = StageTimings::default();
    let n = stack.tokens();

    let needs_features = matches!(cfg.mode, Mode::Pool | Mode::Hybrid);
    if needs_features && !stack.has_features() {
        return Err(Error::MissingFeatures {
            layer: match cfg.reduce.feature_layer {
                FeatureLayer::Fixed(l) => l,
                FeatureLayer::Trigger => 0,
            },
        });
    }

    let t = Instant::now();
    let walk = accumulate(stack, &cfg.walk)?;
    timings.accumulate_ms = ms(t);

    let t = Instant::now();
    let sink = locate_sink(&walk, &cfg.walk);
    if !sink.detected {
        log::warn!(
            "column sum never exceeded tau={}; anchoring on the final depth {}",
            cfg.walk.tau,
            sink.t_star
        );
    }
    let anchor = match cfg.anchor {
        Anchor::Sink => sink.sink_index,
        Anchor::Random { seed } => ChaCha8Rng::seed_from_u64(seed).random_range(1..n),
    };
    timings.sink_ms = ms(t);

    let p = walk.anchor_matrix();
    let t = Instant::now();
    let field = diffusion_distances(p, anchor)?;
    timings.distances_ms = ms(t);

    let t = Instant::now();
    let assignment = radial_cluster(&field, cfg.reduce.k, cfg.reduce.p)?;
    timings.cluster_ms = ms(t);
    if assignment.foreground_len() == 0 {
        log::warn!("every patch token fell into the background; pooling all of them");
    }

    let mut out = PipelineOutput {
        sink,
        anchor,
        column_sum_history: walk.column_sum_history().to_vec(),
        walk_depth: walk.depth(),
        field,
        assignment,
        pooled: None,
        survivors: Vec::new(),
        sampled: false,
        reduced: None,
        mask: Vec::new(),
        removal_log: Vec::new(),
        timings,
    };

    if cfg.mode == Mode::ReportOnly {
        out.survivors = out.assignment.foreground();
        out.mask = token_mask(n, &out.survivors, &out.assignment.background());
        return Ok(out);
    }

    let features: Option<FeatureMatrix> = if stack.has_features() {
        let layer = match cfg.reduce.feature_layer {
            FeatureLayer::Trigger => out.sink.t_star - 1,
            FeatureLayer::Fixed(l) => l,
        };
        Some(stack.features(layer)?)
    } else {
        None
    };

    if cfg.mode != Mode::Prune {
        let t = Instant::now();
        let feats = features
            .as_ref()
            .ok_or(Error::MissingFeatures { layer: 0 })?;
        out.pooled = Some(transition_weight_pool(&out.assignment, &out.field, feats)?);
        out.timings.pool_ms = ms(t);
    }

    match cfg.mode {
        Mode::Pool | Mode::Prune => {
            let t = Instant::now();
            out.survivors = match cfg.reduce.budget {
                Some(budget) => {
                    out.sampled = out.assignment.foreground_len() > budget;
                    stride_sample(
                        &out.assignment,
                        &out.field,
                        budget,
                        cfg.reduce.budget_policy,
                    )?
                }
                None => out.assignment.foreground(),
            };
            out.timings.sample_ms = ms(t);
        }
        Mode::Hybrid => {
            let t = Instant::now();
            let hybrid = cfg.hybrid.expect("validated");
            let foreground = out.assignment.foreground();
            let gated = cls_topk_filter(&foreground, p, hybrid.topk_limit());
            out.sampled = gated.len() > hybrid.target;
            out.survivors = if out.sampled {
                let metric = match hybrid.metric {
                    RedundancyMetric::Diffusion => PairMetric::Diffusion(p),
                    RedundancyMetric::Cosine => PairMetric::Cosine(
                        features
                            .as_ref()
                            .ok_or(Error::MissingFeatures { layer: 0 })?,
                    ),
                };
                let pruned = bipartite_prune_with(&gated, metric, &hybrid)?;
                out.removal_log = pruned.steps;
                pruned.survivors
            } else {
                gated
            };
            out.timings.stage2_ms = ms(t);
        }
        Mode::ReportOnly => unreachable!(),
    }

    let t = Instant::now();
    let feature_of = |i: usize| {
        features
            .as_ref()
            .map_or_else(Vec::new, |f| f.row(i).to_vec())
    };
    let survivors = out.survivors.iter().map(|&i| (i, feature_of(i))).collect();
    let pooled_members = out
        .pooled
        .as_ref()
        .map_or_else(Vec::new, |bg| bg.members.clone());
    out.reduced = Some(assemble(feature_of(0), survivors, out.pooled.clone()));
    out.mask = token_mask(n, &out.survivors, &pooled_members);
    out.timings.assemble_ms = ms(t);
    Ok(out)
}
