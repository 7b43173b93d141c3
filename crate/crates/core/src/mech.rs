// SPDX-License-Identifier: MIT OR Apache-2.0

//! Mechanistic detectors: k-order induction prefix scores, function-vector
//! patching gains and Hydra ablation deltas.

use std::collections::BTreeMap;

use rand::Rng;

use crate::corpus::Shard;
use crate::error::{HlabError, Result};
use crate::model::{forward, Params, Patch, PatchMode, PatchSite, Scalar, Trace, TraceRequest};
use crate::pcfg::VocabLayout;
use crate::rngkit::{mix2, SeedSpec};

const DOMAIN_INDUCTION: u64 = 0x696e_6475;
const DOMAIN_FV: u64 = 0x6676;
const DOMAIN_HYDRA: u64 = 0x6879_6472_61;

/// Which earlier position counts as the induction target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InductionTarget {
    /// Position `i − |x|`, holding the same token one period back.
    SameToken,
    /// Position `i − |x| + 1`, holding the token that followed it.
    Successor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InductionEvalConfig {
    pub half_length: usize,
    pub orders: Vec<usize>,
    pub n_samples: usize,
    pub seed: u64,
    pub target: InductionTarget,
}

impl InductionEvalConfig {
    /// Orders 1..=10 over 100 samples, `|x|` = half the context capped at 64.
    pub fn paper(ctx_len: usize) -> Self {
        Self {
            half_length: (ctx_len / 2).min(64),
            orders: (1..=10).collect(),
            n_samples: 100,
            seed: 0,
            target: InductionTarget::SameToken,
        }
    }

    pub fn validate(&self, ctx_len: usize) -> Result<()> {
        let max_k = self.orders.iter().copied().max().unwrap_or(0);
        if self.half_length <= max_k + 1 {
            return Err(HlabError::config(
                "induction.half_length",
                format!("must exceed max order + 1 = {}", max_k + 1),
            ));
        }
        if 2 * self.half_length > ctx_len {
            return Err(HlabError::config(
                "induction.half_length",
                format!("twice the half length exceeds the context of {ctx_len}"),
            ));
        }
        if self.n_samples == 0 {
            return Err(HlabError::config("induction.n_samples", "must be at least 1"));
        }
        Ok(())
    }
}

/// A value per `(layer, head)`, row-major by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadScores {
    pub n_layers: usize,
    pub n_heads: usize,
    pub values: Vec<f64>,
}

impl HeadScores {
    pub fn get(&self, layer: usize, head: usize) -> f64 {
        self.values[layer * self.n_heads + head]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Prefix score of every head on one trace of a twice-repeated sequence.
///
/// With 1-indexed positions, averages the attention from `i` to its target
/// over `i ∈ [|x|+k+1, 2|x|]`.
pub fn prefix_scores_from<F>(
    attn: F,
    n_layers: usize,
    n_heads: usize,
    half_length: usize,
    k: usize,
    target: InductionTarget,
) -> Result<HeadScores>
where
    F: Fn(usize, usize, usize, usize) -> f64,
{
    if half_length <= k {
        return Err(HlabError::config("induction.half_length", format!("must exceed the order {k}")));
    }
    let lo = half_length + k + 1;
    let hi = 2 * half_length;
    let count = (hi - lo + 1) as f64;
    let mut values = Vec::with_capacity(n_layers * n_heads);
    for l in 0..n_layers {
        for h in 0..n_heads {
            let mut sum = 0.0;
            for i in lo..=hi {
                let key = match target {
                    InductionTarget::SameToken => i - half_length,
                    InductionTarget::Successor => i - half_length + 1,
                };
                sum += attn(l, h, i - 1, key - 1);
            }
            values.push(sum / count);
        }
    }
    Ok(HeadScores {
        n_layers,
        n_heads,
        values,
    })
}

fn trace_scores<T: Scalar>(trace: &Trace<T>, n_layers: usize, half: usize, k: usize, target: InductionTarget) -> Result<HeadScores> {
    prefix_scores_from(
        |l, h, q, key| trace.attn(l, h, q, key).f64(),
        n_layers,
        trace.n_heads,
        half,
        k,
        target,
    )
}

/// The `n_samples` probe sequences: `x` drawn uniformly from the non-EOS
/// ids, then repeated once.
pub fn induction_sequences(cfg: &InductionEvalConfig, vocab_size: usize) -> Vec<Vec<u32>> {
    let pool = vocab_size.saturating_sub(1).max(1) as u32;
    (0..cfg.n_samples as u64)
        .map(|s| {
            let mut rng = SeedSpec::new(cfg.seed, mix2(DOMAIN_INDUCTION, s)).stream();
            let x: Vec<u32> = (0..cfg.half_length).map(|_| rng.random_range(0..pool)).collect();
            x.iter().chain(&x).copied().collect()
        })
        .collect()
}

/// Mean prefix score per head for every order in `cfg.orders`.
pub fn induction_scores<T: Scalar>(params: &Params<T>, cfg: &InductionEvalConfig) -> Result<Vec<(usize, HeadScores)>> {
    cfg.validate(params.cfg.ctx_len)?;
    let (nl, nh) = (params.cfg.n_layers, params.cfg.n_heads);
    let mut acc: Vec<Vec<f64>> = vec![vec![0.0; nl * nh]; cfg.orders.len()];
    let req = TraceRequest {
        want_attention: true,
        ..Default::default()
    };
    for seq in induction_sequences(cfg, params.cfg.vocab_size) {
        let (_, trace) = forward(params, &seq, &req)?;
        for (a, &k) in acc.iter_mut().zip(&cfg.orders) {
            let s = trace_scores(&trace, nl, cfg.half_length, k, cfg.target)?;
            for (o, v) in a.iter_mut().zip(&s.values) {
                *o += v;
            }
        }
    }
    let n = cfg.n_samples as f64;
    Ok(cfg
        .orders
        .iter()
        .zip(acc)
        .map(|(&k, v)| {
            (
                k,
                HeadScores {
                    n_layers: nl,
                    n_heads: nh,
                    values: v.into_iter().map(|x| x / n).collect(),
                },
            )
        })
        .collect())
}

/// Score per head for a single order `k`.
pub fn induction_prefix_score<T: Scalar>(params: &Params<T>, cfg: &InductionEvalConfig, k: usize) -> Result<HeadScores> {
    let one = InductionEvalConfig {
        orders: vec![k],
        ..cfg.clone()
    };
    Ok(induction_scores(params, &one)?.remove(0).1)
}

pub fn max_induction_score<T: Scalar>(params: &Params<T>, cfg: &InductionEvalConfig, k: usize) -> Result<f64> {
    Ok(induction_prefix_score(params, cfg, k)?.max())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FvTaskConfig {
    pub n_tasks: usize,
    pub n_shots: usize,
    pub seed: u64,
    pub mode: PatchMode,
}

impl Default for FvTaskConfig {
    fn default() -> Self {
        Self {
            n_tasks: 20,
            n_shots: 4,
            seed: 0,
            mode: PatchMode::Replace,
        }
    }
}

/// One latent mapping: `n_shots + 1` subject→object pairs sharing a verb.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FvTask {
    pub verb: u32,
    pub pairs: Vec<(u32, u32)>,
    pub eos: u32,
}

impl FvTask {
    /// Few-shot prompt whose query is pair `q`: every other pair as
    /// `S V O EOS`, then `S_q V`.
    pub fn prompt(&self, q: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(4 * self.pairs.len());
        for (i, &(s, o)) in self.pairs.iter().enumerate() {
            if i != q {
                out.extend([s, self.verb, o, self.eos]);
            }
        }
        out.extend([self.pairs[q].0, self.verb]);
        out
    }

    pub fn zero_shot(&self, q: usize) -> [u32; 2] {
        [self.pairs[q].0, self.verb]
    }
}

fn distinct<R: Rng>(range: std::ops::Range<u32>, n: usize, rng: &mut R) -> Result<Vec<u32>> {
    if (range.len()) < n {
        return Err(HlabError::config("fv.n_shots", format!("needs {n} distinct ids, range holds {}", range.len())));
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = rng.random_range(range.clone());
        if !out.contains(&t) {
            out.push(t);
        }
    }
    Ok(out)
}

/// Tasks with distinct subjects and an injective subject→object map.
pub fn build_fv_tasks(layout: &VocabLayout, cfg: &FvTaskConfig) -> Result<Vec<FvTask>> {
    (0..cfg.n_tasks as u64)
        .map(|t| {
            let mut rng = SeedSpec::new(cfg.seed, mix2(DOMAIN_FV, t)).stream();
            let n = cfg.n_shots + 1;
            let verb = rng.random_range(layout.verb.clone());
            let subjects = distinct(layout.subject.clone(), n, &mut rng)?;
            let objects = distinct(layout.object.clone(), n, &mut rng)?;
            Ok(FvTask {
                verb,
                pairs: subjects.into_iter().zip(objects).collect(),
                eos: layout.eos_id,
            })
        })
        .collect()
}

fn last_attn_out<T: Scalar>(params: &Params<T>, tokens: &[u32], layer: usize) -> Result<Vec<f64>> {
    let req = TraceRequest {
        want_attn_out: true,
        ..Default::default()
    };
    let (_, trace) = forward(params, tokens, &req)?;
    let d = params.cfg.d_model;
    let p = tokens.len() - 1;
    Ok(trace.attn_out[layer][p * d..(p + 1) * d].iter().map(|v| v.f64()).collect())
}

fn last_logit<T: Scalar>(params: &Params<T>, tokens: &[u32], token: u32, patches: Vec<Patch>) -> Result<f64> {
    let req = TraceRequest {
        patches,
        ..Default::default()
    };
    let (logits, _) = forward(params, tokens, &req)?;
    let v = params.cfg.vocab_size;
    Ok(logits[(tokens.len() - 1) * v + token as usize].f64())
}

/// Function vector of `task` at `layer`: the attention-sublayer output at the
/// last position, averaged over the task's few-shot prompts.
pub fn function_vector<T: Scalar>(params: &Params<T>, layer: usize, task: &FvTask) -> Result<Vec<f64>> {
    let mut h = vec![0.0; params.cfg.d_model];
    for q in 0..task.pairs.len() {
        for (o, v) in h.iter_mut().zip(last_attn_out(params, &task.prompt(q), layer)?) {
            *o += v;
        }
    }
    let n = task.pairs.len() as f64;
    h.iter_mut().for_each(|x| *x /= n);
    Ok(h)
}

/// Mean over tasks (and each task's queries) of the patched minus base
/// logit of the query's object in the zero-shot prompt.
pub fn fv_score<T: Scalar>(params: &Params<T>, layer: usize, tasks: &[FvTask], mode: PatchMode) -> Result<f64> {
    if layer >= params.cfg.n_layers {
        return Err(HlabError::Shape(format!("layer {layer} beyond {} layers", params.cfg.n_layers)));
    }
    if tasks.is_empty() {
        return Err(HlabError::Metric("no function-vector tasks".into()));
    }
    let mut total = 0.0;
    for task in tasks {
        let h = function_vector(params, layer, task)?;
        let mut sum = 0.0;
        for (q, &(_, obj)) in task.pairs.iter().enumerate() {
            let x = task.zero_shot(q);
            let base = last_logit(params, &x, obj, Vec::new())?;
            let patch = Patch {
                layer,
                site: PatchSite::AttentionOutput,
                position: 1,
                vector: h.clone(),
                mode,
            };
            sum += last_logit(params, &x, obj, vec![patch])? - base;
        }
        total += sum / task.pairs.len() as f64;
    }
    Ok(total / tasks.len() as f64)
}

/// Largest `|Δ|` from patching each few-shot prompt with its own extracted
/// activation. Zero up to rounding for a correct patching path.
pub fn fv_self_patch_delta<T: Scalar>(params: &Params<T>, layer: usize, tasks: &[FvTask]) -> Result<f64> {
    let mut worst = 0.0f64;
    for task in tasks {
        for (q, &(_, obj)) in task.pairs.iter().enumerate() {
            let prompt = task.prompt(q);
            let h = last_attn_out(params, &prompt, layer)?;
            let base = last_logit(params, &prompt, obj, Vec::new())?;
            let patch = Patch {
                layer,
                site: PatchSite::AttentionOutput,
                position: prompt.len() - 1,
                vector: h,
                mode: PatchMode::Replace,
            };
            worst = worst.max((last_logit(params, &prompt, obj, vec![patch])? - base).abs());
        }
    }
    Ok(worst)
}

/// A context window and the positions whose next token is evaluated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalWindow {
    pub tokens: Vec<u32>,
    /// `(position, ground-truth next token)`; may repeat a position.
    pub positions: Vec<(usize, u32)>,
}

impl EvalWindow {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Samples `n_positions` next-token events: a document uniformly, then one
/// of its targets uniformly. Each event is evaluated inside the `ctx_len`
/// chunk of its document that holds it.
pub fn sample_positions(shards: &[Shard], ctx_len: usize, n_positions: usize, seed: u64) -> Result<Vec<EvalWindow>> {
    let docs: Vec<(usize, usize)> = shards
        .iter()
        .enumerate()
        .flat_map(|(s, sh)| (0..sh.document_count()).filter(move |&d| sh.document(d).len() >= 2).map(move |d| (s, d)))
        .collect();
    if docs.is_empty() {
        return Err(HlabError::Metric("held-out corpus has no document with a next token".into()));
    }
    let mut rng = SeedSpec::new(seed, mix2(DOMAIN_HYDRA, 0)).stream();
    let mut groups: BTreeMap<(usize, usize, usize), Vec<(usize, u32)>> = BTreeMap::new();
    for _ in 0..n_positions {
        let (s, d) = docs[rng.random_range(0..docs.len())];
        let doc = shards[s].document(d);
        let pos = rng.random_range(0..doc.len() - 1);
        let chunk = pos / ctx_len;
        groups
            .entry((s, d, chunk))
            .or_default()
            .push((pos - chunk * ctx_len, u32::from(doc[pos + 1])));
    }
    Ok(groups
        .into_iter()
        .map(|((s, d, chunk), positions)| {
            let doc = shards[s].document(d);
            let start = chunk * ctx_len;
            let end = (start + ctx_len).min(doc.len() - 1);
            EvalWindow {
                tokens: doc[start..end].iter().map(|&t| u32::from(t)).collect(),
                positions,
            }
        })
        .collect())
}

fn lens_truth_logits<T: Scalar>(params: &Params<T>, data: &[EvalWindow], req: &TraceRequest) -> Result<Vec<Vec<f64>>> {
    let v = params.cfg.vocab_size;
    let mut per_layer: Vec<Vec<f64>> = vec![Vec::new(); params.cfg.n_layers];
    for w in data {
        let (_, trace) = forward(params, &w.tokens, req)?;
        for &l in &req.lens_layers {
            let lens = trace.lens(l).expect("requested lens layer");
            per_layer[l].extend(w.positions.iter().map(|&(p, y)| lens[p * v + y as usize].f64()));
        }
    }
    Ok(per_layer)
}

fn mean_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64
}

/// `Δ̄` at lens layer `layer` when block `layer − m` is skipped: mean of the
/// base minus ablated ground-truth logit.
pub fn hydra_delta<T: Scalar>(params: &Params<T>, data: &[EvalWindow], layer: usize, m: usize) -> Result<f64> {
    if m == 0 || m > layer || layer >= params.cfg.n_layers {
        return Err(HlabError::config(
            "hydra",
            format!("need 1 ≤ m ≤ layer < {}; got layer {layer}, m {m}", params.cfg.n_layers),
        ));
    }
    if data.iter().all(EvalWindow::is_empty) {
        return Err(HlabError::Metric("empty hydra dataset".into()));
    }
    let base = TraceRequest {
        lens_layers: [layer].into_iter().collect(),
        ..Default::default()
    };
    let ablated = TraceRequest {
        ablate_blocks: [layer - m].into_iter().collect(),
        ..base.clone()
    };
    let b = lens_truth_logits(params, data, &base)?;
    let a = lens_truth_logits(params, data, &ablated)?;
    Ok(mean_diff(&b[layer], &a[layer]))
}

/// [`hydra_delta`] for every valid lens layer at offset `m`, sharing the base
/// pass. Entry `ℓ` is `None` when `ℓ < m`.
pub fn hydra_deltas<T: Scalar>(params: &Params<T>, data: &[EvalWindow], m: usize) -> Result<Vec<Option<f64>>> {
    let nl = params.cfg.n_layers;
    if m == 0 {
        return Err(HlabError::config("hydra.m", "must be at least 1"));
    }
    if data.iter().all(EvalWindow::is_empty) {
        return Err(HlabError::Metric("empty hydra dataset".into()));
    }
    let base = TraceRequest {
        lens_layers: (m..nl).collect(),
        ..Default::default()
    };
    let b = lens_truth_logits(params, data, &base)?;
    let mut out = vec![None; nl];
    for (layer, slot) in out.iter_mut().enumerate().skip(m) {
        let req = TraceRequest {
            lens_layers: [layer].into_iter().collect(),
            ablate_blocks: [layer - m].into_iter().collect(),
            ..Default::default()
        };
        let a = lens_truth_logits(params, data, &req)?;
        *slot = Some(mean_diff(&b[layer], &a[layer]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_copy_trace_scores_one() {
        let half = 8;
        for k in 1..5 {
            let s = prefix_scores_from(
                |_, _, q, key| if key + half == q { 1.0 } else { 0.0 },
                1,
                1,
                half,
                k,
                InductionTarget::SameToken,
            )
            .unwrap();
            assert_eq!(s.get(0, 0), 1.0);
        }
    }

    #[test]
    fn uniform_causal_attention_matches_direct_sum() {
        let s = prefix_scores_from(|_, _, q, _| 1.0 / (q + 1) as f64, 1, 1, 8, 1, InductionTarget::SameToken).unwrap();
        let expect: f64 = (10..=16).map(|i| 1.0 / i as f64).sum::<f64>() / 7.0;
        assert!((s.get(0, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn order_must_be_below_half_length() {
        assert!(prefix_scores_from(|_, _, _, _| 0.0, 1, 1, 3, 3, InductionTarget::SameToken).is_err());
    }

    #[test]
    fn prompts_hide_the_query_pair() {
        let task = FvTask {
            verb: 7,
            pairs: vec![(1, 20), (2, 21), (3, 22)],
            eos: 99,
        };
        assert_eq!(task.prompt(1), vec![1, 7, 20, 99, 3, 7, 22, 99, 2, 7]);
        assert_eq!(task.zero_shot(2), [3, 7]);
    }
}
