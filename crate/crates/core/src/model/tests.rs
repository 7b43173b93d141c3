// SPDX-License-Identifier: MIT OR Apache-2.0

use super::*;
use crate::corpus::Batch;
use rand::Rng;

fn tiny(n_layers: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers,
        n_heads: 2,
        vocab_size: 11,
        ctx_len: 6,
        ..ModelConfig::paper()
    }
}

/// Init with O(1) weights so every path carries signal.
fn noisy(cfg: &ModelConfig, seed: u64) -> Params<f64> {
    let mut p = Params::<f64>::zeros(cfg);
    let mut rng = SeedSpec::new(seed, 1).stream();
    for x in &mut p.data {
        *x = rng.random_range(-0.6..0.6);
    }
    for l in 0..cfg.n_layers {
        for bt in [BlockTensor::AttnNorm, BlockTensor::MlpNorm] {
            for g in p.tensor_mut(p.layout.block(l, bt)) {
                *g += 1.0;
            }
        }
    }
    let fnorm = p.layout.final_norm();
    for g in p.tensor_mut(fnorm) {
        *g += 1.0;
    }
    p
}

fn batch(tokens: &[[u32; 6]], targets: &[[u32; 6]], mask: &[[u8; 6]]) -> Batch {
    Batch {
        batch_size: tokens.len(),
        ctx_len: 6,
        inputs: tokens.iter().flatten().copied().collect(),
        targets: targets.iter().flatten().copied().collect(),
        mask: mask.iter().flatten().copied().collect(),
    }
}

#[test]
fn hidden_dim_rounds_to_eight() {
    assert_eq!(ModelConfig::desk().hidden_dim(), 344);
    assert_eq!(ModelConfig::paper().hidden_dim(), 688);
    assert_eq!(tiny(1).hidden_dim(), 24);
}

#[test]
fn empty_request_matches_plain_forward() {
    let cfg = tiny(2);
    let p = noisy(&cfg, 3);
    let toks = [1, 4, 2, 9, 0];
    let plain = forward_logits(&p, &toks, 1).unwrap();
    let (traced, _) = forward(&p, &toks, &TraceRequest::default()).unwrap();
    assert_eq!(plain, traced);
}

#[test]
fn ablating_every_block_leaves_embedding_lens() {
    let cfg = tiny(3);
    let p = noisy(&cfg, 4);
    let toks = [3u32, 5, 7];
    let req = TraceRequest {
        ablate_blocks: (0..3).collect(),
        ..Default::default()
    };
    let (logits, _) = forward(&p, &toks, &req).unwrap();
    let emb: Vec<f64> = toks
        .iter()
        .flat_map(|&t| p.tensor(p.layout.embed())[t as usize * 8..(t as usize + 1) * 8].to_vec())
        .collect();
    let expect = logit_lens_rows(&p, &emb);
    assert_eq!(logits, expect);
}

#[test]
fn one_layer_ablation_equals_embeddings_lens() {
    let cfg = tiny(1);
    let p = noisy(&cfg, 5);
    let toks = [2u32, 2, 8, 1];
    let req = TraceRequest {
        ablate_blocks: [0].into_iter().collect(),
        lens_layers: [0].into_iter().collect(),
        ..Default::default()
    };
    let (_, trace) = forward(&p, &toks, &req).unwrap();
    let emb: Vec<f64> = toks
        .iter()
        .flat_map(|&t| p.tensor(p.layout.embed())[t as usize * 8..(t as usize + 1) * 8].to_vec())
        .collect();
    assert_eq!(trace.lens(0).unwrap(), logit_lens_rows(&p, &emb).as_slice());
}

#[test]
fn self_patch_is_identity() {
    let cfg = tiny(2);
    let p = noisy(&cfg, 6);
    let toks = [1u32, 2, 3, 4, 5];
    let req = TraceRequest {
        want_attn_out: true,
        want_residuals: true,
        ..Default::default()
    };
    let (base, trace) = forward(&p, &toks, &req).unwrap();
    for (site, src) in [
        (PatchSite::AttentionOutput, &trace.attn_out[1]),
        (PatchSite::Residual, &trace.residual[0]),
    ] {
        let patch = Patch {
            layer: if site == PatchSite::Residual { 0 } else { 1 },
            site,
            position: 3,
            vector: src[3 * 8..4 * 8].to_vec(),
            mode: PatchMode::Replace,
        };
        let req = TraceRequest {
            patches: vec![patch],
            ..Default::default()
        };
        let (patched, _) = forward(&p, &toks, &req).unwrap();
        for (a, b) in base.iter().zip(&patched) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn add_patch_changes_only_later_positions() {
    let cfg = tiny(2);
    let p = noisy(&cfg, 7);
    let toks = [1u32, 2, 3, 4, 5];
    let (base, _) = forward(&p, &toks, &TraceRequest::default()).unwrap();
    let req = TraceRequest {
        patches: vec![Patch {
            layer: 0,
            site: PatchSite::AttentionOutput,
            position: 2,
            vector: vec![0.5; 8],
            mode: PatchMode::Add,
        }],
        ..Default::default()
    };
    let (patched, _) = forward(&p, &toks, &req).unwrap();
    let v = cfg.vocab_size;
    assert_eq!(&base[..2 * v], &patched[..2 * v]);
    assert_ne!(&base[2 * v..3 * v], &patched[2 * v..3 * v]);
}

#[test]
fn lens_properties() {
    let cfg = tiny(2);
    let p = noisy(&cfg, 8);
    assert!(logit_lens(&p, &[0.0; 8]).unwrap().iter().all(|&x| x == 0.0));
    assert!(logit_lens(&p, &[0.0; 7]).is_err());
    let toks = [4u32, 1, 0, 6];
    let req = TraceRequest {
        lens_layers: [1].into_iter().collect(),
        ..Default::default()
    };
    let (logits, trace) = forward(&p, &toks, &req).unwrap();
    for (a, b) in logits.iter().zip(trace.lens(1).unwrap()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn attention_rows_are_causal_distributions() {
    let cfg = tiny(2);
    let p = noisy(&cfg, 9);
    let toks = [4u32, 1, 0, 6, 6, 2];
    let req = TraceRequest {
        want_attention: true,
        ..Default::default()
    };
    let (_, trace) = forward(&p, &toks, &req).unwrap();
    for l in 0..2 {
        for h in 0..2 {
            for q in 0..6 {
                let row: f64 = (0..6).map(|k| trace.attn(l, h, q, k)).sum();
                assert!((row - 1.0).abs() < 1e-5);
                for k in q + 1..6 {
                    assert_eq!(trace.attn(l, h, q, k), 0.0);
                }
            }
        }
    }
}

#[test]
fn causality_under_perturbation() {
    let cfg = tiny(2);
    let p = noisy(&cfg, 10);
    let base_toks = [4u32, 1, 0, 6, 6, 2];
    let base = forward_logits(&p, &base_toks, 1).unwrap();
    let v = cfg.vocab_size;
    for t in 0..6 {
        let mut toks = base_toks;
        toks[t] = (toks[t] + 3) % 11;
        let out = forward_logits(&p, &toks, 1).unwrap();
        assert_eq!(&base[..t * v], &out[..t * v], "perturbing {t} leaked backwards");
    }
}

#[test]
fn uniform_logits_give_log_vocab() {
    let cfg = tiny(2);
    let mut p = noisy(&cfg, 11);
    let u = p.layout.unembed();
    p.tensor_mut(u).iter_mut().for_each(|x| *x = 0.0);
    let b = batch(&[[1, 2, 3, 4, 5, 6]], &[[2, 3, 4, 5, 6, 7]], &[[1; 6]]);
    let (loss, _) = loss_and_grads(&p, &b).unwrap();
    assert!((loss - (11f64).ln()).abs() < 1e-12);
}

#[test]
fn duplicated_row_keeps_mean_loss() {
    let cfg = tiny(2);
    let p = noisy(&cfg, 12);
    let one = batch(&[[1, 2, 3, 4, 5, 6]], &[[2, 3, 4, 5, 6, 7]], &[[1, 1, 1, 1, 0, 0]]);
    let two = batch(
        &[[1, 2, 3, 4, 5, 6], [1, 2, 3, 4, 5, 6]],
        &[[2, 3, 4, 5, 6, 7], [2, 3, 4, 5, 6, 7]],
        &[[1, 1, 1, 1, 0, 0], [1, 1, 1, 1, 0, 0]],
    );
    let a = mean_loss(&p, &one).unwrap();
    let b = mean_loss(&p, &two).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn masked_positions_do_not_contribute() {
    let cfg = tiny(1);
    let p = noisy(&cfg, 13);
    let a = batch(&[[1, 2, 3, 4, 5, 6]], &[[2, 3, 4, 5, 6, 7]], &[[1, 1, 1, 0, 0, 0]]);
    let b = batch(&[[1, 2, 3, 4, 5, 6]], &[[2, 3, 4, 9, 9, 9]], &[[1, 1, 1, 0, 0, 0]]);
    assert_eq!(mean_loss(&p, &a).unwrap(), mean_loss(&p, &b).unwrap());
}

#[test]
fn shape_errors_are_reported() {
    let cfg = tiny(1);
    let p = noisy(&cfg, 14);
    assert!(forward(&p, &[1, 2, 3, 4, 5, 6, 7], &TraceRequest::default()).is_err());
    assert!(forward(&p, &[11], &TraceRequest::default()).is_err());
    let req = TraceRequest {
        ablate_blocks: [1].into_iter().collect(),
        ..Default::default()
    };
    assert!(forward(&p, &[1], &req).is_err());
}
