use proptest::prelude::*;

use asap_core::attnio::{read_stack_from, write_stack_to};
use asap_core::hybrid::{bipartite_prune, cls_topk_filter, HybridConfig};
use asap_core::pipeline::{run_pipeline, Mode, PipelineConfig, ReduceConfig};
use asap_core::reduce::{Provenance, TokenFate};
use asap_core::synth::{gen_sink_stack, SynthConfig};
use asap_core::walk::{accumulate, WalkConfig};

fn any_stack() -> impl Strategy<Value = SynthConfig> {
    (
        4usize..24,
        1usize..8,
        1usize..3,
        any::<u64>(),
        0.0f64..0.2,
        any::<bool>(),
    )
        .prop_map(|(n, layers, heads, seed, margin, planted)| SynthConfig {
            n,
            layers,
            heads,
            seed,
            margin: if planted { margin } else { 0.0 },
            sink_index: planted.then_some(1 + (seed as usize % (n - 1))),
            feature_dim: 3,
            ..SynthConfig::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn atnb_round_trip_is_bit_exact(cfg in any_stack()) {
        let stack = gen_sink_stack(&cfg).unwrap();
        let mut bytes = Vec::new();
        write_stack_to(&stack, &mut bytes).unwrap();
        let back = read_stack_from(&bytes[..]).unwrap();
        prop_assert_eq!(back, stack);
    }

    #[test]
    fn every_product_stays_row_stochastic(cfg in any_stack(), alpha in 0.05f64..0.95) {
        let stack = gen_sink_stack(&cfg).unwrap();
        let walk = WalkConfig { alpha, early_stop: false, retain_history: true, ..WalkConfig::default() };
        let state = accumulate(&stack, &walk).unwrap();
        for p in state.history().unwrap() {
            prop_assert!(p.max_row_deviation() < 1e-9);
        }
    }

    #[test]
    fn pool_output_accounts_for_every_token(cfg in any_stack(), budget in 1usize..12) {
        let stack = gen_sink_stack(&cfg).unwrap();
        let run = PipelineConfig {
            reduce: ReduceConfig { budget: Some(budget), ..ReduceConfig::default() },
            ..PipelineConfig::default()
        };
        let out = run_pipeline(&stack, &run).unwrap();
        prop_assert_eq!(out.assignment.sizes().iter().sum::<usize>(), cfg.n - 1);

        let set = out.reduced.as_ref().unwrap();
        prop_assert_eq!(&set.tokens()[0].provenance, &Provenance::Cls);
        if out.sampled {
            prop_assert!(set.len() <= budget + 2);
        } else {
            prop_assert_eq!(set.len(), out.assignment.foreground_len() + 2);
        }

        let mut seen = vec![0usize; cfg.n];
        for t in set.tokens() {
            match &t.provenance {
                Provenance::Cls => seen[0] += 1,
                Provenance::Survivor { index } => seen[*index] += 1,
                Provenance::PooledBackground { members } => members.iter().for_each(|&m| seen[m] += 1),
            }
        }
        for (i, fate) in out.mask.iter().enumerate() {
            let expected = usize::from(*fate != TokenFate::Drop);
            prop_assert_eq!(seen[i], expected, "token {}", i);
        }

        let w: f64 = out.pooled.as_ref().unwrap().weights.iter().sum();
        prop_assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bipartite_prune_hits_target_exactly(cfg in any_stack(), target in 1usize..6, batch in prop::option::of(1usize..4)) {
        let stack = gen_sink_stack(&cfg).unwrap();
        let state = accumulate(&stack, &WalkConfig { early_stop: false, ..WalkConfig::default() }).unwrap();
        let survivors: Vec<usize> = (1..cfg.n).collect();
        prop_assume!(survivors.len() >= target);
        let h = HybridConfig { removal_batch: batch, ..HybridConfig::new(target) };
        let out = bipartite_prune(&survivors, state.cumulative(), &h).unwrap();
        prop_assert_eq!(out.survivors.len(), target);
        let again = bipartite_prune(&survivors, state.cumulative(), &h).unwrap();
        prop_assert_eq!(out.survivors, again.survivors);
    }

    #[test]
    fn topk_gate_never_grows(cfg in any_stack(), limit in 1usize..30) {
        let stack = gen_sink_stack(&cfg).unwrap();
        let state = accumulate(&stack, &WalkConfig::default()).unwrap();
        let s: Vec<usize> = (1..cfg.n).collect();
        let kept = cls_topk_filter(&s, state.anchor_matrix(), limit);
        prop_assert_eq!(kept.len(), s.len().min(limit));
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn hybrid_respects_target(cfg in any_stack(), target in 1usize..8) {
        let stack = gen_sink_stack(&cfg).unwrap();
        let run = PipelineConfig {
            mode: Mode::Hybrid,
            hybrid: Some(HybridConfig::new(target)),
            ..PipelineConfig::default()
        };
        let out = run_pipeline(&stack, &run).unwrap();
        prop_assert!(out.survivors.len() <= target);
        prop_assert!(out.reduced.unwrap().len() <= target + 2);
    }
}
