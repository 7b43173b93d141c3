// SPDX-License-Identifier: MIT OR Apache-2.0

//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hlab_core::corpus::Batch;
use hlab_core::geo::{probe_loss, ProbeParams, ProbeSentence};
use hlab_core::model::{loss_and_grads, mean_loss, ModelConfig, Params};
use hlab_core::pcfg::{valid_next_categories, Category, CategoryMask, Label, Nonterminal, ParseTree, RecognizerState};

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        vocab_size: 11,
        ctx_len: 6,
        ..ModelConfig::desk()
    }
}

/// Random weights at a scale where every nonlinearity is exercised.
pub fn rough_params(cfg: &ModelConfig, seed: u64) -> Params<f64> {
    let mut p = Params::<f64>::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in &mut p.data {
        *x = rng.random_range(-0.6..0.6);
    }
    for spec in p.layout.specs.clone() {
        if spec.shape.len() == 1 {
            for x in &mut p.data[spec.offset..spec.offset + spec.len] {
                *x = 1.0 + rng.random_range(-0.3..0.3);
            }
        }
    }
    p
}

pub fn tiny_batch(cfg: &ModelConfig, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, t) = (2, cfg.ctx_len);
    let v = cfg.vocab_size as u32;
    let inputs: Vec<u32> = (0..b * t).map(|_| rng.random_range(0..v)).collect();
    let targets: Vec<u32> = (0..b * t).map(|_| rng.random_range(0..v)).collect();
    let mut mask = vec![1u8; b * t];
    mask[b * t - 1] = 0;
    Batch {
        batch_size: b,
        ctx_len: t,
        inputs,
        targets,
        mask,
    }
}

/// Max relative error of the analytic gradient against central differences
/// over every parameter.
pub fn model_grad_max_rel_err(seed: u64) -> f64 {
    let cfg = tiny_model_config();
    let params = rough_params(&cfg, seed);
    let batch = tiny_batch(&cfg, seed + 1);
    let (_, grads) = loss_and_grads(&params, &batch).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut p = params.clone();
    for i in 0..p.data.len() {
        let x = p.data[i];
        p.data[i] = x + h;
        let up = mean_loss(&p, &batch).unwrap();
        p.data[i] = x - h;
        let down = mean_loss(&p, &batch).unwrap();
        p.data[i] = x;
        worst = worst.max(rel_err(grads.data[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// Three random sentences with hand-built trees of 3, 4 and 5 leaves.
pub fn probe_toy(d: usize, seed: u64) -> Vec<ProbeSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [3usize, 4, 5]
        .into_iter()
        .map(|n| {
            let tree = flat_chain_tree(n);
            let reps: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            ProbeSentence::new(reps, &tree, d).unwrap()
        })
        .collect()
}

/// Right-branching binary tree over `n` leaves.
pub fn flat_chain_tree(n: usize) -> ParseTree {
    let mut items = Vec::new();
    for _ in 0..n - 1 {
        items.push((Label::Nonterminal(Nonterminal::Assertion).encode(), 2));
        items.push((Label::Token(0).encode(), 0));
    }
    items.push((Label::Token(0).encode(), 0));
    ParseTree::from_preorder(&items).unwrap()
}

pub fn probe_grad_max_rel_err(seed: u64) -> f64 {
    let (r, d) = (3, 5);
    let sents = probe_toy(d, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    let b: Vec<f64> = (0..r * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut probe = ProbeParams::new(r, d, b).unwrap();
    let mut g = vec![0.0; r * d];
    probe_loss(&probe, &sents, Some(&mut g));
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..r * d {
        let x = probe.b[i];
        probe.b[i] = x + h;
        let up = probe_loss(&probe, &sents, None);
        probe.b[i] = x - h;
        let down = probe_loss(&probe, &sents, None);
        probe.b[i] = x;
        worst = worst.max(rel_err(g[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// Category strings derivable from the sentence grammar, length ≤ `max_len`,
/// by direct expansion of the production rules.
pub fn grammar_language(max_len: usize) -> BTreeSet<Vec<Category>> {
    use Category::*;
    // Assertion → S V O | Assertion CONN Assertion
    let mut assertions: BTreeSet<Vec<Category>> = BTreeSet::new();
    assertions.insert(vec![Subject, Verb, Object]);
    loop {
        let mut grown = assertions.clone();
        for a in &assertions {
            for b in &assertions {
                if a.len() + 1 + b.len() < max_len {
                    let mut s = a.clone();
                    s.push(Connector);
                    s.extend(b);
                    grown.insert(s);
                }
            }
        }
        if grown.len() == assertions.len() {
            break;
        }
        assertions = grown;
    }
    // Sentence → Assertion EOS | Question EOS, Question → V S O
    let mut out: BTreeSet<Vec<Category>> = assertions
        .into_iter()
        .map(|mut a| {
            a.push(Eos);
            a
        })
        .filter(|s| s.len() <= max_len)
        .collect();
    out.insert(vec![Verb, Subject, Object, Eos]);
    out
}

pub struct GrammarOracleReport {
    pub prefixes: usize,
    pub mismatches: Vec<String>,
}

/// Compares the recognizer with brute-force enumeration for every valid
/// prefix up to `max_prefix` and every one-category extension of it.
pub fn grammar_oracle(max_prefix: usize) -> GrammarOracleReport {
    // Any valid prefix completes within four more categories.
    let lang = grammar_language(max_prefix + 5);
    let mut prefixes: BTreeSet<Vec<Category>> = BTreeSet::new();
    for s in &lang {
        for k in 0..s.len() {
            if k <= max_prefix {
                prefixes.insert(s[..k].to_vec());
            }
        }
    }
    let mut mismatches = Vec::new();
    for p in &prefixes {
        let want = CategoryMask::of(
            &Category::ALL
                .into_iter()
                .filter(|&c| {
                    let mut q = p.clone();
                    q.push(c);
                    lang.iter().any(|s| s.starts_with(&q))
                })
                .collect::<Vec<_>>(),
        );
        let got = RecognizerState::from_prefix(p).and_then(valid_next_categories);
        match got {
            Ok(m) if m == want => {}
            other => mismatches.push(format!("{p:?}: oracle {want:?}, recognizer {other:?}")),
        }
        for c in Category::ALL {
            let mut q = p.clone();
            q.push(c);
            let valid_prefix = lang.iter().any(|s| s.starts_with(&q));
            let accepted = RecognizerState::from_prefix(&q).is_ok();
            if valid_prefix != accepted {
                mismatches.push(format!("{q:?}: oracle prefix {valid_prefix}, recognizer {accepted}"));
            }
        }
    }
    GrammarOracleReport {
        prefixes: prefixes.len(),
        mismatches,
    }
}
