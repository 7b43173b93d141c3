// SPDX-License-Identifier: MIT OR Apache-2.0

//! Parse-tree geometry: structural probes, UUAS, and the probability mass a
//! model puts on grammatical next tokens.

use rand::Rng;

use crate::corpus::{windows, AnnotationRecord, Shard};
use crate::error::{HlabError, Result};
use crate::model::{forward, Params, Scalar, TraceRequest};
use crate::pcfg::{CategoryMask, ParseTree, VocabLayout};
use crate::rngkit::{mix2, permutation, SeedSpec};

const DOMAIN_PROBE: u64 = 0x7072_6f62_65;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub rank: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Sentences per optimizer step.
    pub batch_sentences: usize,
    /// Epochs without a dev improvement before stopping.
    pub patience: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            rank: 64,
            learning_rate: 1e-3,
            epochs: 40,
            batch_sentences: 20,
            patience: 5,
            n_train: 600,
            n_dev: 100,
            n_test: 200,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self, d_model: usize) -> Result<()> {
        if self.rank == 0 || self.rank > d_model {
            return Err(HlabError::config("probe.rank", format!("must lie in 1..={d_model}")));
        }
        if self.batch_sentences == 0 {
            return Err(HlabError::config("probe.batch_sentences", "must be at least 1"));
        }
        if self.n_train == 0 || self.n_dev == 0 || self.n_test == 0 {
            return Err(HlabError::config("probe", "train, dev and test splits must be non-empty"));
        }
        Ok(())
    }
}

/// `B`, stored `rank × d_model` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    pub rank: usize,
    pub d_model: usize,
    pub b: Vec<f64>,
}

impl ProbeParams {
    pub fn new(rank: usize, d_model: usize, b: Vec<f64>) -> Result<Self> {
        if b.len() != rank * d_model {
            return Err(HlabError::Shape(format!("probe matrix has {} entries, expected {rank}×{d_model}", b.len())));
        }
        Ok(Self { rank, d_model, b })
    }

    pub fn identity(d_model: usize) -> Self {
        let mut b = vec![0.0; d_model * d_model];
        for i in 0..d_model {
            b[i * d_model + i] = 1.0;
        }
        Self {
            rank: d_model,
            d_model,
            b,
        }
    }

    fn project(&self, h: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.b[r * self.d_model..(r + 1) * self.d_model]
                .iter()
                .zip(h)
                .map(|(a, x)| a * x)
                .sum();
        }
    }
}

/// `‖B(h_i − h_j)‖²`.
pub fn predicted_distance(probe: &ProbeParams, hi: &[f64], hj: &[f64]) -> Result<f64> {
    if hi.len() != probe.d_model || hj.len() != probe.d_model {
        return Err(HlabError::Shape(format!(
            "vectors of length {} and {}, probe expects {}",
            hi.len(),
            hj.len(),
            probe.d_model
        )));
    }
    let diff: Vec<f64> = hi.iter().zip(hj).map(|(a, b)| a - b).collect();
    let mut p = vec![0.0; probe.rank];
    probe.project(&diff, &mut p);
    Ok(p.iter().map(|x| x * x).sum())
}

/// Token representations of one sentence with its gold tree distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSentence {
    pub n: usize,
    /// `n × d_model`.
    pub reps: Vec<f64>,
    /// `n × n`.
    pub gold: Vec<f64>,
}

impl ProbeSentence {
    pub fn new(reps: Vec<f64>, tree: &ParseTree, d_model: usize) -> Result<Self> {
        let gold: Vec<f64> = tree.distance_matrix().into_iter().flatten().map(|x| x as f64).collect();
        let n = (gold.len() as f64).sqrt() as usize;
        if reps.len() != n * d_model {
            return Err(HlabError::Shape(format!(
                "{} representation entries for a {n}-leaf tree at width {d_model}",
                reps.len()
            )));
        }
        Ok(Self { n, reps, gold })
    }
}

fn projections(probe: &ProbeParams, s: &ProbeSentence) -> Vec<f64> {
    let d = probe.d_model;
    let mut p = vec![0.0; s.n * probe.rank];
    for i in 0..s.n {
        probe.project(&s.reps[i * d..(i + 1) * d], &mut p[i * probe.rank..(i + 1) * probe.rank]);
    }
    p
}

fn sq_dist(p: &[f64], rank: usize, i: usize, j: usize) -> f64 {
    p[i * rank..(i + 1) * rank]
        .iter()
        .zip(&p[j * rank..(j + 1) * rank])
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Predicted `n × n` squared-distance matrix for one sentence.
pub fn predicted_matrix(probe: &ProbeParams, s: &ProbeSentence) -> Vec<f64> {
    let p = projections(probe, s);
    let mut out = vec![0.0; s.n * s.n];
    for i in 0..s.n {
        for j in i + 1..s.n {
            let v = sq_dist(&p, probe.rank, i, j);
            out[i * s.n + j] = v;
            out[j * s.n + i] = v;
        }
    }
    out
}

/// Mean over sentences of `(1/n²) Σ_{i<j} |d_tree − d_B²|`, with the
/// gradient with respect to `B` when `grad` is given.
pub fn probe_loss(probe: &ProbeParams, sentences: &[ProbeSentence], mut grad: Option<&mut [f64]>) -> f64 {
    let (r, d) = (probe.rank, probe.d_model);
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|x| *x = 0.0);
    }
    if sentences.is_empty() {
        return 0.0;
    }
    let inv_s = 1.0 / sentences.len() as f64;
    let mut total = 0.0;
    for s in sentences {
        let p = projections(probe, s);
        let norm = 1.0 / (s.n * s.n) as f64;
        let mut dp = vec![0.0; s.n * r];
        for i in 0..s.n {
            for j in i + 1..s.n {
                let pred = sq_dist(&p, r, i, j);
                let resid = pred - s.gold[i * s.n + j];
                total += resid.abs() * norm * inv_s;
                let sign = if resid > 0.0 {
                    1.0
                } else if resid < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                let c = 2.0 * sign * norm * inv_s;
                for k in 0..r {
                    let diff = p[i * r + k] - p[j * r + k];
                    dp[i * r + k] += c * diff;
                    dp[j * r + k] -= c * diff;
                }
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            // dB = dPᵀ H
            for i in 0..s.n {
                let h = &s.reps[i * d..(i + 1) * d];
                for k in 0..r {
                    let c = dp[i * r + k];
                    if c == 0.0 {
                        continue;
                    }
                    for (o, &x) in g[k * d..(k + 1) * d].iter_mut().zip(h) {
                        *o += c * x;
                    }
                }
            }
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFit {
    pub probe: ProbeParams,
    pub best_dev_loss: f64,
    pub epochs_run: usize,
}

/// Adam on minibatches of sentences; returns the `B` with the lowest dev loss.
pub fn train_probe(train: &[ProbeSentence], dev: &[ProbeSentence], d_model: usize, cfg: &ProbeConfig) -> Result<ProbeFit> {
    if train.is_empty() {
        return Err(HlabError::Metric("probe training set is empty".into()));
    }
    if cfg.rank == 0 || cfg.rank > d_model {
        return Err(HlabError::config("probe.rank", format!("must lie in 1..={d_model}")));
    }
    let mut rng = SeedSpec::new(cfg.seed, mix2(DOMAIN_PROBE, 0)).stream();
    let bound = 1.0 / (d_model as f64).sqrt();
    let init: Vec<f64> = (0..cfg.rank * d_model).map(|_| rng.random_range(-bound..bound)).collect();
    train_probe_from(ProbeParams::new(cfg.rank, d_model, init)?, train, dev, cfg)
}

pub fn train_probe_from(
    mut probe: ProbeParams,
    train: &[ProbeSentence],
    dev: &[ProbeSentence],
    cfg: &ProbeConfig,
) -> Result<ProbeFit> {
    if train.is_empty() {
        return Err(HlabError::Metric("probe training set is empty".into()));
    }
    let dev_set = if dev.is_empty() { train } else { dev };
    let n = probe.b.len();
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut t = 0i32;
    let mut best = (probe_loss(&probe, dev_set, None), probe.clone());
    let mut stale = 0;
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        let mut rng = SeedSpec::new(cfg.seed, mix2(DOMAIN_PROBE, 1 + epoch as u64)).stream();
        let order = permutation(train.len(), &mut rng);
        for chunk in order.chunks(cfg.batch_sentences.max(1)) {
            let batch: Vec<ProbeSentence> = chunk.iter().map(|&i| train[i].clone()).collect();
            probe_loss(&probe, &batch, Some(&mut g));
            t += 1;
            let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
            for i in 0..n {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                probe.b[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        let dev_loss = probe_loss(&probe, dev_set, None);
        if !dev_loss.is_finite() {
            return Err(HlabError::Metric("probe diverged".into()));
        }
        if dev_loss < best.0 {
            best = (dev_loss, probe.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(ProbeFit {
        probe: best.1,
        best_dev_loss: best.0,
        epochs_run,
    })
}

/// Kruskal MST over `n` points. Edges are taken in `(weight, i, j)` order,
/// so equal weights resolve to the lexicographically smallest pair.
pub fn mst_edges(n: usize, dist: &[f64]) -> Vec<(usize, usize)> {
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in i + 1..n {
            edges.push((dist[i * n + j], i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for (_, i, j) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            out.push((i, j));
            if out.len() + 1 == n {
                break;
            }
        }
    }
    out
}

/// Shared-edge count between the MSTs of `predicted` and `gold` (both
/// `n × n`), and the edge total `n − 1`.
pub fn shared_edges(predicted: &[f64], gold: &[f64], n: usize) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(HlabError::Metric(format!("UUAS needs at least two leaves, got {n}")));
    }
    if predicted.len() != n * n || gold.len() != n * n {
        return Err(HlabError::Shape(format!("distance matrices must be {n}×{n}")));
    }
    let g = mst_edges(n, gold);
    let p = mst_edges(n, predicted);
    Ok((p.iter().filter(|e| g.contains(e)).count(), n - 1))
}

/// Fraction of gold MST edges recovered by the MST of `predicted`.
pub fn uuas_from_distances(predicted: &[f64], gold: &[f64], n: usize) -> Result<f64> {
    let (hit, total) = shared_edges(predicted, gold, n)?;
    Ok(hit as f64 / total as f64)
}

/// [`uuas_from_distances`] against the leaf distances of `tree`.
pub fn uuas(predicted: &[f64], tree: &ParseTree) -> Result<f64> {
    let gold: Vec<f64> = tree.distance_matrix().into_iter().flatten().map(|x| x as f64).collect();
    let n = (gold.len() as f64).sqrt() as usize;
    uuas_from_distances(predicted, &gold, n)
}

/// Pooled UUAS: shared edges over all sentences divided by all gold edges.
pub fn corpus_uuas(probe: &ProbeParams, sentences: &[ProbeSentence]) -> Result<f64> {
    let (mut hit, mut total) = (0, 0);
    for s in sentences.iter().filter(|s| s.n >= 2) {
        let (h, t) = shared_edges(&predicted_matrix(probe, s), &s.gold, s.n)?;
        hit += h;
        total += t;
    }
    if total == 0 {
        return Err(HlabError::Metric("no sentence with two or more leaves".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// Held-out sentences inside one context window, as input-relative spans.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedWindow {
    pub tokens: Vec<u32>,
    /// `(start, end, tree)` with `end` exclusive.
    pub sentences: Vec<(usize, usize, ParseTree)>,
    /// `(position, mask)`: the logits at `position` are scored against the
    /// valid categories of the token at `position + 1`.
    pub masks: Vec<(usize, CategoryMask)>,
}

/// Cuts a held-out shard into context windows and attaches the sentences
/// and masks that fall inside each.
pub fn annotated_windows(shard: &Shard, records: &[AnnotationRecord], ctx_len: usize) -> Result<Vec<AnnotatedWindow>> {
    if records.is_empty() {
        return Err(HlabError::Metric("missing annotations".into()));
    }
    let mut mask_at = vec![0u8; shard.tokens.len()];
    for r in records {
        if r.end as usize > shard.tokens.len() || (r.end - r.start) as usize != r.masks.len() {
            return Err(HlabError::Metric(format!("annotation span {}..{} does not fit the shard", r.start, r.end)));
        }
        mask_at[r.start as usize..r.end as usize].copy_from_slice(&r.masks);
    }
    let mut by_start: Vec<&AnnotationRecord> = records.iter().collect();
    by_start.sort_by_key(|r| r.start);
    let mut out = Vec::new();
    for w in windows(std::slice::from_ref(shard), ctx_len) {
        let lo = w.start as usize;
        let hi = lo + w.targets;
        let first = by_start.partition_point(|r| (r.start as usize) < lo);
        let sentences = by_start[first..]
            .iter()
            .take_while(|r| (r.end as usize) <= hi)
            .map(|r| (r.start as usize - lo, r.end as usize - lo, r.tree.clone()))
            .collect();
        let masks = (lo + 1..=hi)
            .filter(|&a| mask_at[a] != 0)
            .map(|a| (a - lo - 1, CategoryMask(mask_at[a])))
            .collect();
        out.push(AnnotatedWindow {
            tokens: shard.tokens[lo..hi].iter().map(|&t| u32::from(t)).collect(),
            sentences,
            masks,
        });
    }
    Ok(out)
}

/// Post-block residuals of every sentence: `out[layer][sentence]`, up to
/// `max_sentences` sentences in window order.
pub fn probe_sentences<T: Scalar>(
    params: &Params<T>,
    data: &[AnnotatedWindow],
    max_sentences: usize,
) -> Result<Vec<Vec<ProbeSentence>>> {
    let (nl, d) = (params.cfg.n_layers, params.cfg.d_model);
    let mut out: Vec<Vec<ProbeSentence>> = vec![Vec::new(); nl];
    let req = TraceRequest {
        want_residuals: true,
        ..Default::default()
    };
    let mut taken = 0;
    for w in data {
        if taken >= max_sentences {
            break;
        }
        if w.sentences.is_empty() {
            continue;
        }
        let (_, trace) = forward(params, &w.tokens, &req)?;
        for (start, end, tree) in w.sentences.iter().take(max_sentences - taken) {
            for (l, layer_out) in out.iter_mut().enumerate() {
                let reps = trace.residual[l][start * d..end * d].iter().map(|v| v.f64()).collect();
                layer_out.push(ProbeSentence::new(reps, tree, d)?);
            }
            taken += 1;
        }
    }
    Ok(out)
}

/// Probability of the valid set under `softmax(logits)`.
pub fn mask_mass(logits: &[f64], layout: &VocabLayout, mask: CategoryMask) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&x| (x - m).exp()).sum();
    mask.categories()
        .into_iter()
        .flat_map(|c| layout.range(c))
        .map(|t| (logits[t as usize] - m).exp())
        .sum::<f64>()
        / z
}

/// Mean valid-next-token mass over the first `n_positions` annotated
/// positions, and the mass a uniform predictor would get on the same positions.
pub fn valid_mass<T: Scalar>(
    params: &Params<T>,
    data: &[AnnotatedWindow],
    layout: &VocabLayout,
    n_positions: usize,
) -> Result<(f64, f64)> {
    let v = params.cfg.vocab_size;
    if v != layout.vocab_size as usize {
        return Err(HlabError::Shape(format!("model vocabulary {v} differs from layout {}", layout.vocab_size)));
    }
    let (mut mass, mut uniform, mut count) = (0.0, 0.0, 0usize);
    for w in data {
        if count >= n_positions {
            break;
        }
        if w.masks.is_empty() {
            continue;
        }
        let (logits, _) = forward(params, &w.tokens, &TraceRequest::default())?;
        for &(p, mask) in w.masks.iter().take(n_positions - count) {
            let row: Vec<f64> = logits[p * v..(p + 1) * v].iter().map(|x| x.f64()).collect();
            mass += mask_mass(&row, layout, mask);
            uniform += f64::from(layout.mask_size(mask)) / v as f64;
            count += 1;
        }
    }
    if count == 0 {
        return Err(HlabError::Metric("missing annotations".into()));
    }
    Ok((mass / count as f64, uniform / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_by_hand() {
        let b = ProbeParams::new(1, 2, vec![1.0, 0.0]).unwrap();
        assert_eq!(predicted_distance(&b, &[3.0, 5.0], &[1.0, 9.0]).unwrap(), 4.0);
        assert_eq!(predicted_distance(&b, &[3.0, 5.0], &[3.0, 5.0]).unwrap(), 0.0);
        assert!(predicted_distance(&b, &[3.0], &[1.0, 9.0]).is_err());
    }

    #[test]
    fn mst_breaks_ties_lexicographically() {
        let d = [0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        assert_eq!(mst_edges(3, &d), vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn two_leaves_always_agree() {
        assert_eq!(uuas_from_distances(&[0.0, 9.0, 9.0, 0.0], &[0.0, 1.0, 1.0, 0.0], 2).unwrap(), 1.0);
        assert!(uuas_from_distances(&[0.0], &[0.0], 1).is_err());
    }
}
