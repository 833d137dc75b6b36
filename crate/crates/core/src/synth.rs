//! Synthetic attention stacks with a planted sink column.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attnio::AttentionStack;
use crate::error::{Error, Result};

/// Added to the sink floor so `f32` storage and renormalization cannot dip below it.
pub const FLOOR_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub layers: usize,
    pub heads: usize,
    /// Every row puts at least `1/n + margin` on the sink column.
    pub margin: f64,
    /// Planted sink; `None` gives a plain random stochastic stack.
    pub sink_index: Option<usize>,
    pub seed: u64,
    /// Dirichlet concentration of the off-sink mass.
    pub noise: f64,
    /// Feature width; 0 omits features.
    pub feature_dim: usize,
    /// Self-attention of the sink row itself. 1.0 makes the sink absorbing.
    pub sink_retention: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 16,
            layers: 12,
            heads: 1,
            margin: 0.3,
            sink_index: Some(1),
            seed: 0,
            noise: 1.0,
            feature_dim: 8,
            sink_retention: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.layers == 0 || self.heads == 0 {
            return Err(Error::Config(format!(
                "need n >= 2, layers >= 1, heads >= 1; got n={}, layers={}, heads={}",
                self.n, self.layers, self.heads
            )));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::Config(format!(
                "margin must be >= 0, got {}",
                self.margin
            )));
        }
        if !(self.noise.is_finite() && self.noise > 0.0) {
            return Err(Error::Config(format!(
                "noise must be > 0, got {}",
                self.noise
            )));
        }
        if !(0.0..=1.0).contains(&self.sink_retention) {
            return Err(Error::Config(format!(
                "sink_retention must lie in [0, 1], got {}",
                self.sink_retention
            )));
        }
        match self.sink_index {
            Some(0) => return Err(Error::SinkIsCls),
            Some(s) if s >= self.n => {
                return Err(Error::IndexOutOfRange {
                    index: s,
                    n: self.n,
                })
            }
            None if self.margin > 0.0 => {
                return Err(Error::Config("a positive margin needs a sink index".into()))
            }
            _ => {}
        }
        if 1.0 / self.n as f64 + self.margin > 1.0 {
            return Err(Error::InfeasibleMargin {
                n: self.n,
                margin: self.margin,
            });
        }
        Ok(())
    }

    /// Lower bound every generated row places on the sink column.
    pub fn sink_floor(&self) -> f64 {
        1.0 / self.n as f64 + self.margin
    }
}

fn layer_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fills `out` with a Dirichlet(`noise`) draw scaled to `mass`.
fn dirichlet_into(rng: &mut ChaCha8Rng, gamma: &Gamma<f64>, mass: f64, out: &mut [f64]) {
    let mut total = 0.0;
    for v in out.iter_mut() {
        *v = gamma.sample(rng);
        total += *v;
    }
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v *= mass / total);
    } else {
        let even = mass / out.len() as f64;
        out.iter_mut().for_each(|v| *v = even);
    }
}

fn row_with_sink(
    rng: &mut ChaCha8Rng,
    gamma: &Gamma<f64>,
    n: usize,
    sink: usize,
    sink_mass: f64,
    scratch: &mut Vec<f64>,
) -> Vec<f64> {
    let mut row = vec![0.0; n];
    let sink_mass = sink_mass.min(1.0);
    row[sink] = sink_mass;
    scratch.resize(n - 1, 0.0);
    dirichlet_into(rng, gamma, 1.0 - sink_mass, scratch);
    let others = (0..n).filter(|&j| j != sink);
    for (j, &v) in others.zip(scratch.iter()) {
        row[j] = v;
    }
    row
}

fn gaussian_features(cfg: &SynthConfig) -> Option<(usize, Vec<f32>)> {
    if cfg.feature_dim == 0 {
        return None;
    }
    let mut data = Vec::with_capacity(cfg.layers * cfg.n * cfg.feature_dim);
    for layer in 0..cfg.layers {
        let mut rng = layer_rng(cfg.seed, 2 * layer as u64 + 1);
        for _ in 0..cfg.n * cfg.feature_dim {
            let v: f64 = StandardNormal.sample(&mut rng);
            data.push(v as f32);
        }
    }
    Some((cfg.feature_dim, data))
}

fn meta_for(cfg: &SynthConfig, kind: &str) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    meta.insert("generator".into(), kind.into());
    meta.insert("seed".into(), cfg.seed.to_string());
    meta.insert("margin".into(), cfg.margin.to_string());
    if let Some(s) = cfg.sink_index {
        meta.insert("sink_index".into(), s.to_string());
    }
    meta
}

/// Builds a stack whose every row favours `sink_index` by at least the margin.
///
/// Each layer draws from its own ChaCha stream, so a layer's content does not
/// depend on how many layers precede it.
pub fn gen_sink_stack(cfg: &SynthConfig) -> Result<AttentionStack> {
    cfg.validate()?;
    let n = cfg.n;
    let gamma = Gamma::new(cfg.noise, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut attn = Vec::with_capacity(cfg.layers * cfg.heads * n * n);
    let mut scratch = Vec::new();
    for layer in 0..cfg.layers {
        let mut rng = layer_rng(cfg.seed, 2 * layer as u64);
        for _ in 0..cfg.heads {
            for k in 0..n {
                let row = match cfg.sink_index {
                    Some(s) => {
                        let floor = cfg.sink_floor() + FLOOR_SLACK;
                        let mass = if k == s {
                            floor.max(cfg.sink_retention)
                        } else {
                            floor
                        };
                        row_with_sink(&mut rng, &gamma, n, s, mass, &mut scratch)
                    }
                    None => {
                        let mut row = vec![0.0; n];
                        dirichlet_into(&mut rng, &gamma, 1.0, &mut row);
                        row
                    }
                };
                attn.extend(row.into_iter().map(|v| v as f32));
            }
        }
    }
    let kind = if cfg.sink_index.is_some() {
        "sink"
    } else {
        "random"
    };
    AttentionStack::new(
        cfg.layers,
        cfg.heads,
        n,
        attn,
        gaussian_features(cfg),
        meta_for(cfg, kind),
    )
}

/// Every attention entry equals `1/n`. Only `n`, `layers`, `heads`,
/// `feature_dim` and `seed` are read.
pub fn gen_uniform_stack(cfg: &SynthConfig) -> Result<AttentionStack> {
    if cfg.n < 2 || cfg.layers == 0 || cfg.heads == 0 {
        return Err(Error::Config("need n >= 2, layers >= 1, heads >= 1".into()));
    }
    let value = 1.0 / cfg.n as f32;
    let attn = vec![value; cfg.layers * cfg.heads * cfg.n * cfg.n];
    AttentionStack::new(
        cfg.layers,
        cfg.heads,
        cfg.n,
        attn,
        gaussian_features(cfg),
        meta_for(cfg, "uniform"),
    )
}

/// Draws a random sink index in `1..n`.
pub fn random_sink(rng: &mut impl Rng, n: usize) -> usize {
    rng.random_range(1..n)
}
