// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use proptest::prelude::*;

use hlab_core::corpus::Shard;
use hlab_core::geo::{predicted_distance, uuas, ProbeParams};
use hlab_core::mech::{prefix_scores_from, InductionTarget};
use hlab_core::pcfg::{parse_sentence, Grammar, PcfgConfig, RecognizerState};
use hlab_core::rngkit::{permutation, SeedSpec};

fn grammar() -> Grammar {
    Grammar::new(PcfgConfig { vocab_size: 120, seed: 3, ..PcfgConfig::paper() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shard_bytes_round_trip(docs in prop::collection::vec(prop::collection::vec(0u32..50, 1..20), 0..8)) {
        let shard = Shard::from_documents(50, docs.iter().map(|d| d.as_slice())).unwrap();
        let back = Shard::from_bytes(&shard.to_bytes(), "prop").unwrap();
        prop_assert_eq!(back, shard);
    }

    #[test]
    fn permutations_are_bijections(n in 0usize..200, seed in any::<u64>()) {
        let mut p = permutation(n, &mut SeedSpec::new(seed, 1).stream());
        p.sort_unstable();
        prop_assert_eq!(p, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn generated_sentences_parse_and_track_masks(doc_id in 0u64..10_000) {
        let g = grammar();
        let doc = g.sample_document(doc_id);
        for (tree, &(s, e)) in doc.trees.iter().zip(&doc.spans) {
            prop_assert_eq!(&parse_sentence(&doc.tokens[s..e], &g.layout).unwrap(), tree);
            let mut state = RecognizerState::Start;
            for p in s..e {
                let c = g.layout.category(doc.tokens[p]).unwrap();
                prop_assert!(doc.masks[p].contains(c));
                state = state.step(c).unwrap();
            }
            prop_assert_eq!(state, RecognizerState::Complete);
        }
    }

    #[test]
    fn uuas_ignores_monotone_rescaling(doc_id in 0u64..10_000, scale in 0.01f64..100.0, power in 0.2f64..4.0) {
        let g = grammar();
        let doc = g.sample_document(doc_id);
        for tree in &doc.trees {
            let pred: Vec<f64> = tree
                .distance_matrix()
                .into_iter()
                .flatten()
                .map(|x| scale * (x as f64).powf(power))
                .collect();
            prop_assert_eq!(uuas(&pred, tree).unwrap(), 1.0);
        }
    }

    #[test]
    fn probe_distance_is_a_pseudometric(
        b in prop::collection::vec(-2.0f64..2.0, 6),
        x in prop::collection::vec(-5.0f64..5.0, 3),
        y in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let probe = ProbeParams::new(2, 3, b).unwrap();
        let dxy = predicted_distance(&probe, &x, &y).unwrap();
        prop_assert!(dxy >= 0.0);
        prop_assert_eq!(dxy, predicted_distance(&probe, &y, &x).unwrap());
        prop_assert_eq!(predicted_distance(&probe, &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn one_hot_trace_on_target_scores_one(half in 4usize..40, k in 1usize..4, successor in any::<bool>()) {
        prop_assume!(half > k + 1);
        let target = if successor { InductionTarget::Successor } else { InductionTarget::SameToken };
        let shift = if successor { half - 1 } else { half };
        let attn = |_: usize, _: usize, q: usize, key: usize| if q >= shift && key == q - shift { 1.0 } else { 0.0 };
        let s = prefix_scores_from(attn, 1, 1, half, k, target).unwrap();
        prop_assert_eq!(s.get(0, 0), 1.0);
    }
}
