mod common;

use asap_core::geometry::{
    diffusion_distances, spearman_rank, stationary_estimate, weighted_diffusion_distances,
};
use asap_core::sink::locate_sink;
use asap_core::synth::{gen_sink_stack, SynthConfig};
use asap_core::walk::{accumulate, WalkConfig};

fn planted(
    n: usize,
    layers: usize,
    margin: f64,
    sink: usize,
    seed: u64,
) -> asap_core::AttentionStack {
    gen_sink_stack(&SynthConfig {
        n,
        layers,
        heads: 2,
        margin,
        sink_index: Some(sink),
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn small_sink_stack_stops_where_repeated_multiply_does() {
    let stack = planted(8, 12, 0.3, 5, 1);
    let cfg = WalkConfig::default();
    let state = accumulate(&stack, &cfg).unwrap();

    let products = common::products(&common::layer_maps(&stack), cfg.alpha);
    let expected = common::trigger_depth(&products, cfg.tau).expect("oracle trips");
    assert!(expected < 12);
    assert_eq!(state.trigger().unwrap().depth, expected);
    assert_eq!(state.depth(), expected);

    let history = state.column_sum_history();
    assert!(history.windows(2).all(|w| w[1] > w[0]), "{history:?}");
    for (t, &c) in history.iter().enumerate() {
        assert!((c - common::max_patch_column(&products[t]).1).abs() < 1e-12);
    }
}

#[test]
fn planted_sink_found_at_oracle_depth() {
    let stack = planted(16, 12, 0.2, 5, 3);
    let cfg = WalkConfig::default();
    let state = accumulate(&stack, &cfg).unwrap();
    let report = locate_sink(&state, &cfg);

    let products = common::products(&common::layer_maps(&stack), cfg.alpha);
    let t = common::trigger_depth(&products, cfg.tau).unwrap();
    assert!(report.detected);
    assert_eq!(report.t_star, t);
    assert_eq!(report.sink_index, 5);
    assert_eq!(common::cls_argmax(&products[t - 1]), 5);
}

#[test]
fn cumulative_product_matches_oracle_entrywise() {
    let stack = planted(12, 6, 0.1, 2, 8);
    let cfg = WalkConfig {
        early_stop: false,
        retain_history: true,
        ..WalkConfig::default()
    };
    let state = accumulate(&stack, &cfg).unwrap();
    let products = common::products(&common::layer_maps(&stack), cfg.alpha);
    for (p, q) in state.history().unwrap().iter().zip(&products) {
        let p = common::to_mat(p);
        for i in 0..12 {
            for j in 0..12 {
                assert!((p[i][j] - q[i][j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn distance_kernels_match_scalar_loops() {
    let stack = planted(20, 5, 0.05, 7, 21);
    let cfg = WalkConfig {
        early_stop: false,
        ..WalkConfig::default()
    };
    let state = accumulate(&stack, &cfg).unwrap();
    let p = state.cumulative();
    let q = common::to_mat(p);

    let field = diffusion_distances(p, 7).unwrap();
    for (a, b) in field.raw().iter().zip(common::distances(&q, 7)) {
        assert!((a - b).abs() < 1e-12);
    }

    let phi = stationary_estimate(p);
    let oracle_phi = common::phi(&q);
    let w = weighted_diffusion_distances(p, 7, &phi).unwrap();
    for (a, b) in w.iter().zip(common::weighted_distances(&q, 7, &oracle_phi)) {
        assert!((a - b).abs() < 1e-12);
    }

    let rho = spearman_rank(field.raw(), &w).unwrap();
    assert!((rho - common::spearman(field.raw(), &w)).abs() < 1e-12);
}
