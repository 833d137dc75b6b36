//! Sink index resolution and mass-accumulation diagnostics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::walk::{WalkConfig, WalkState};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkReport {
    /// Depth of the matrix the anchor was read from (the trigger depth when detected).
    pub t_star: usize,
    /// Argmax over `j >= 1` of the CLS row; never 0.
    pub sink_index: usize,
    /// Max patch column sum at `t_star`.
    pub trigger_value: f64,
    pub detected: bool,
    /// Column holding the max column sum at `t_star`. The CLS-row rule may pick
    /// a different token; this is kept for diagnosis only.
    pub column_sum_argmax: usize,
    #[serde(skip)]
    pub cls_row: Vec<f64>,
}

/// Index of the largest entry in `values[1..]`, lowest index on ties.
pub fn argmax_patch(values: &[f64]) -> usize {
    let mut best = 1;
    for (j, &v) in values.iter().enumerate().skip(2) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

/// Reads the sink off the CLS row of `P(t*)`.
///
/// When the threshold never tripped, the final product stands in for `P(t*)`
/// and the report is flagged `detected = false`.
pub fn locate_sink(state: &WalkState, cfg: &WalkConfig) -> SinkReport {
    let p = state.anchor_matrix();
    let t_star = state.anchor_depth();
    let cls_row = p.row(0).to_vec();
    let sink_index = argmax_patch(&cls_row);
    let trigger_value = state.column_sum_history()[t_star - 1];
    let column_sum_argmax = state.column_argmax_history()[t_star - 1];
    let detected = state.detected();
    debug_assert!(!detected || trigger_value > cfg.tau);
    SinkReport {
        t_star,
        sink_index,
        trigger_value,
        detected,
        column_sum_argmax,
        cls_row,
    }
}

/// Column sum of `token` in every retained `P(t)`, `t = 1..=depth`.
pub fn mass_trajectory(state: &WalkState, token: usize) -> Result<Vec<f64>> {
    let history = state.history().ok_or(Error::HistoryNotRetained)?;
    let n = state.cumulative().n();
    if token >= n {
        return Err(Error::IndexOutOfRange { index: token, n });
    }
    Ok(history.iter().map(|p| p.column_sum(token)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attnio::AttentionStack;
    use crate::walk::accumulate;
    use std::collections::BTreeMap;

    #[test]
    fn argmax_picks_largest_patch_entry() {
        assert_eq!(argmax_patch(&[0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_patch(&[0.2, 0.4, 0.4]), 1);
        // CLS mass never counts
        assert_eq!(argmax_patch(&[0.9, 0.05, 0.05]), 1);
    }

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
    fn fallback_when_not_detected() {
        let stack = identity_stack(4, 3);
        let cfg = WalkConfig::default();
        let state = accumulate(&stack, &cfg).unwrap();
        let report = locate_sink(&state, &cfg);
        assert!(!report.detected);
        assert_eq!(report.t_star, 4);
        assert_eq!(report.sink_index, 1);
    }

    #[test]
    fn identity_trajectory_is_flat() {
        let stack = identity_stack(5, 4);
        let cfg = WalkConfig {
            retain_history: true,
            ..Default::default()
        };
        let state = accumulate(&stack, &cfg).unwrap();
        assert_eq!(mass_trajectory(&state, 2).unwrap(), vec![1.0; 5]);
        assert!(matches!(
            mass_trajectory(&state, 4),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn trajectory_needs_history() {
        let stack = identity_stack(2, 3);
        let state = accumulate(&stack, &WalkConfig::default()).unwrap();
        assert!(matches!(
            mass_trajectory(&state, 1),
            Err(Error::HistoryNotRetained)
        ));
    }
}
