//! Lazy random walk over the layer stack.
//!
//! Each layer's head-averaged map `A` becomes `alpha * A + (1 - alpha) * I`,
//! and the cumulative matrix is the left-to-right product
//! `P(t) = Ã(1) × Ã(2) × … × Ã(t)`. After every layer the largest column sum
//! over patch columns (`j >= 1`) is recorded; the first depth where it exceeds
//! `tau` is the sink emergence depth.

use serde::{Deserialize, Serialize};

use crate::attnio::AttentionStack;
use crate::error::{Error, Result};
use crate::matrix::TransitionMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    /// Weight on attention versus the residual self-loop, in (0, 1).
    pub alpha: f64,
    /// Column-sum trigger, > 1.
    pub tau: f64,
    /// Cap on accumulation depth; `None` means every layer.
    pub max_layers: Option<usize>,
    /// Stop at the trigger depth. Disable to record the full column-sum curve.
    pub early_stop: bool,
    /// Keep every intermediate `P(t)`; costs O(L·N²) memory.
    pub retain_history: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            tau: 7.0,
            max_layers: None,
            early_stop: true,
            retain_history: false,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(self.tau.is_finite() && self.tau > 1.0) {
            return Err(Error::TauOutOfRange(self.tau));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    Ok(())
}

/// Where and how the column-sum threshold first tripped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Trigger {
    /// Number of layers consumed, 1-based.
    pub depth: usize,
    pub value: f64,
    /// Column holding the maximum at that depth.
    pub column: usize,
}

#[derive(Debug, Clone)]
pub struct WalkState {
    cumulative: TransitionMatrix,
    depth: usize,
    column_sum_history: Vec<f64>,
    column_argmax_history: Vec<usize>,
    trigger: Option<Trigger>,
    // P(t*) kept aside when accumulation continued past the trigger
    trigger_matrix: Option<TransitionMatrix>,
    history: Option<Vec<TransitionMatrix>>,
}

impl WalkState {
    /// The product after the last consumed layer.
    pub fn cumulative(&self) -> &TransitionMatrix {
        &self.cumulative
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `max_{j>=1}` column sum after each layer; length equals `depth`.
    pub fn column_sum_history(&self) -> &[f64] {
        &self.column_sum_history
    }

    pub fn column_argmax_history(&self) -> &[usize] {
        &self.column_argmax_history
    }

    /// `None` means the threshold never tripped.
    pub fn trigger(&self) -> Option<Trigger> {
        self.trigger
    }

    pub fn detected(&self) -> bool {
        self.trigger.is_some()
    }

    /// `P(t*)` if the threshold tripped, otherwise the final product.
    pub fn anchor_matrix(&self) -> &TransitionMatrix {
        self.trigger_matrix.as_ref().unwrap_or(&self.cumulative)
    }

    /// Depth that [`anchor_matrix`](Self::anchor_matrix) corresponds to.
    pub fn anchor_depth(&self) -> usize {
        self.trigger.map_or(self.depth, |t| t.depth)
    }

    /// Every intermediate `P(t)`, present only with `retain_history`.
    pub fn history(&self) -> Option<&[TransitionMatrix]> {
        self.history.as_deref()
    }
}

/// `alpha * a + (1 - alpha) * I`.
pub fn lazify(a: &TransitionMatrix, alpha: f64) -> Result<TransitionMatrix> {
    check_alpha(alpha)?;
    let n = a.n();
    let mut data: Vec<f64> = a.as_slice().iter().map(|v| alpha * v).collect();
    for i in 0..n {
        data[i * n + i] += 1.0 - alpha;
    }
    Ok(TransitionMatrix::from_stochastic(n, data))
}

/// Largest column sum over patch columns; ties go to the lowest index.
pub fn max_patch_column(p: &TransitionMatrix) -> (usize, f64) {
    let sums = p.column_sums();
    let mut best = (1, sums[1]);
    for (j, &s) in sums.iter().enumerate().skip(2) {
        if s > best.1 {
            best = (j, s);
        }
    }
    best
}

/// Runs the walk over `stack`, head-averaging each layer on the fly.
pub fn accumulate(stack: &AttentionStack, cfg: &WalkConfig) -> Result<WalkState> {
    cfg.validate()?;
    let limit = cfg.max_layers.unwrap_or(stack.layers()).min(stack.layers());
    accumulate_layers((0..limit).map(|l| stack.head_average(l)), cfg)
}

/// Runs the walk over already head-averaged layer maps.
pub fn accumulate_layers<I>(layers: I, cfg: &WalkConfig) -> Result<WalkState>
where
    I: IntoIterator<Item = Result<TransitionMatrix>>,
{
    cfg.validate()?;
    let limit = cfg.max_layers.unwrap_or(usize::MAX);
    let mut layers = layers.into_iter().take(limit);

    let first = match layers.next() {
        Some(layer) => lazify(&layer?, cfg.alpha)?,
        None => return Err(Error::EmptyStack),
    };
    if first.n() < 2 {
        return Err(Error::ShapeMismatch("walk needs at least 2 tokens".into()));
    }

    let mut state = WalkState {
        cumulative: first,
        depth: 1,
        column_sum_history: Vec::new(),
        column_argmax_history: Vec::new(),
        trigger: None,
        trigger_matrix: None,
        history: cfg.retain_history.then(Vec::new),
    };
    if record(&mut state, cfg) && cfg.early_stop {
        return Ok(state);
    }

    for layer in layers {
        let layer = layer?;
        if layer.n() != state.cumulative.n() {
            return Err(Error::ShapeMismatch(format!(
                "layer has {} tokens, walk has {}",
                layer.n(),
                state.cumulative.n()
            )));
        }
        let lazy = lazify(&layer, cfg.alpha)?;
        state.cumulative = state.cumulative.matmul(&lazy);
        state.depth += 1;
        if record(&mut state, cfg) && cfg.early_stop {
            break;
        }
    }
    Ok(state)
}

// Returns true when this depth is the first to trip the threshold.
fn record(state: &mut WalkState, cfg: &WalkConfig) -> bool {
    let (column, value) = max_patch_column(&state.cumulative);
    state.column_sum_history.push(value);
    state.column_argmax_history.push(column);
    if let Some(history) = state.history.as_mut() {
        history.push(state.cumulative.clone());
    }
    if state.trigger.is_none() && value > cfg.tau {
        state.trigger = Some(Trigger {
            depth: state.depth,
            value,
            column,
        });
        if !cfg.early_stop {
            state.trigger_matrix = Some(state.cumulative.clone());
        }
        return true;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn identity_stack(layers: usize, n: usize) -> AttentionStack {
        let mut attn = Vec::new();
        for _ in 0..layers {
            for i in 0..n {
                for j in 0..n {
                    attn.push(if i == j { 1.0 } else { 0.0 });
                }
            }
        }
        AttentionStack::new(layers, 1, n, attn, None, BTreeMap::new()).unwrap()
    }

    #[test]
    fn lazify_identity_is_fixed_point() {
        let i = TransitionMatrix::identity(3);
        assert_eq!(lazify(&i, 0.3).unwrap(), i);
    }

    #[test]
    fn lazify_hand_arithmetic() {
        let a = TransitionMatrix::uniform(2);
        let l = lazify(&a, 0.5).unwrap();
        assert_eq!(l.as_slice(), &[0.75, 0.25, 0.25, 0.75]);
    }

    #[test]
    fn lazify_rejects_closed_interval_ends() {
        let a = TransitionMatrix::uniform(2);
        assert!(matches!(lazify(&a, 1.0), Err(Error::AlphaOutOfRange(_))));
        assert!(matches!(lazify(&a, 0.0), Err(Error::AlphaOutOfRange(_))));
    }

    #[test]
    fn identity_chain_never_triggers() {
        let stack = identity_stack(6, 4);
        let state = accumulate(&stack, &WalkConfig::default()).unwrap();
        assert!(!state.detected());
        assert_eq!(state.depth(), 6);
        assert_eq!(state.column_sum_history(), &[1.0; 6]);
    }

    #[test]
    fn max_layers_caps_depth() {
        let stack = identity_stack(6, 4);
        let cfg = WalkConfig {
            max_layers: Some(2),
            ..Default::default()
        };
        assert_eq!(accumulate(&stack, &cfg).unwrap().depth(), 2);
        let cfg = WalkConfig {
            max_layers: Some(0),
            ..Default::default()
        };
        assert!(matches!(accumulate(&stack, &cfg), Err(Error::EmptyStack)));
    }

    #[test]
    fn tau_must_exceed_one() {
        let cfg = WalkConfig {
            tau: 1.0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::TauOutOfRange(_))));
    }

    #[test]
    fn trigger_snapshot_survives_without_early_stop() {
        // every row sends everything to token 1: column 1 sum = n after one layer
        let n = 4;
        let mut attn = Vec::new();
        for _ in 0..3 {
            for _ in 0..n {
                attn.extend_from_slice(&[0.0, 1.0, 0.0, 0.0]);
            }
        }
        let stack = AttentionStack::new(3, 1, n, attn, None, BTreeMap::new()).unwrap();
        let cfg = WalkConfig {
            tau: 2.0,
            early_stop: false,
            retain_history: true,
            ..Default::default()
        };
        let state = accumulate(&stack, &cfg).unwrap();
        assert_eq!(state.depth(), 3);
        let trig = state.trigger().unwrap();
        assert_eq!(trig.column, 1);
        assert_eq!(state.anchor_depth(), trig.depth);
        assert_eq!(
            state.anchor_matrix(),
            &state.history().unwrap()[trig.depth - 1]
        );
    }
}
