// SPDX-License-Identifier: MIT OR Apache-2.0

//! Instrumented decoder-only transformer.
//!
//! Pre-norm blocks `x += Attn(RMSNorm(x)); x += SwiGLU(RMSNorm(x))` with
//! rotary position encoding, untied unembedding and a final RMSNorm. The
//! forward pass can record attention maps, post-block residuals,
//! attention-sublayer outputs and logit-lens readouts, zero whole blocks, and
//! patch activations. The backward pass is written by hand in
//! [`backward`](self::backward) and works in f32 or f64.

mod backward;
pub mod checkpoint;
mod scalar;

use std::collections::BTreeSet;

use rand_distr::{Distribution, Normal};

pub use backward::{loss_and_grads, mean_loss};
pub use scalar::{matmul, Scalar};

use crate::error::{HlabError, Result};
use crate::rngkit::SeedSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub ctx_len: usize,
    /// Gated-MLP hidden width as a multiple of `d_model` (rounded up to 8).
    pub mlp_multiplier: f64,
    pub norm_eps: f64,
    pub rotary_base: f64,
}

impl ModelConfig {
    /// 17M-parameter configuration from the published model table.
    pub fn paper() -> Self {
        Self {
            d_model: 256,
            n_layers: 16,
            n_heads: 4,
            vocab_size: 1000,
            ctx_len: 512,
            mlp_multiplier: 8.0 / 3.0,
            norm_eps: 1e-5,
            rotary_base: 10_000.0,
        }
    }

    pub fn desk() -> Self {
        Self {
            d_model: 128,
            n_layers: 8,
            n_heads: 4,
            vocab_size: 200,
            ctx_len: 256,
            ..Self::paper()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn hidden_dim(&self) -> usize {
        let raw = (self.mlp_multiplier * self.d_model as f64).ceil() as usize;
        raw.div_ceil(8) * 8
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(HlabError::config("model.n_heads", "must divide d_model"));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(HlabError::config("model.n_heads", "head dimension must be even for rotary encoding"));
        }
        for (name, v) in [
            ("model.n_layers", self.n_layers),
            ("model.vocab_size", self.vocab_size),
            ("model.ctx_len", self.ctx_len),
        ] {
            if v == 0 {
                return Err(HlabError::config(name, "must be at least 1"));
            }
        }
        if !(self.norm_eps > 0.0) {
            return Err(HlabError::config("model.norm_eps", "must be positive"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        ParamLayout::new(self).total
    }
}

/// Per-block tensors, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockTensor {
    AttnNorm = 0,
    Wq,
    Wk,
    Wv,
    Wo,
    MlpNorm,
    WGate,
    WUp,
    WDown,
}

const PER_BLOCK: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Where every named tensor lives inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub specs: Vec<TensorSpec>,
    pub total: usize,
    n_layers: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, h, v) = (cfg.d_model, cfg.hidden_dim(), cfg.vocab_size);
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, shape: Vec<usize>| {
            let len = shape.iter().product();
            specs.push(TensorSpec {
                name,
                shape,
                offset,
                len,
            });
            offset += len;
        };
        add("tok_embeddings".into(), vec![v, d]);
        for l in 0..cfg.n_layers {
            add(format!("layers.{l}.attention_norm"), vec![d]);
            add(format!("layers.{l}.attention.wq"), vec![d, d]);
            add(format!("layers.{l}.attention.wk"), vec![d, d]);
            add(format!("layers.{l}.attention.wv"), vec![d, d]);
            add(format!("layers.{l}.attention.wo"), vec![d, d]);
            add(format!("layers.{l}.ffn_norm"), vec![d]);
            add(format!("layers.{l}.feed_forward.w_gate"), vec![d, h]);
            add(format!("layers.{l}.feed_forward.w_up"), vec![d, h]);
            add(format!("layers.{l}.feed_forward.w_down"), vec![h, d]);
        }
        add("norm".into(), vec![d]);
        add("output".into(), vec![d, v]);
        Self {
            specs,
            total: offset,
            n_layers: cfg.n_layers,
        }
    }

    pub fn embed(&self) -> usize {
        0
    }

    pub fn block(&self, layer: usize, t: BlockTensor) -> usize {
        1 + PER_BLOCK * layer + t as usize
    }

    pub fn final_norm(&self) -> usize {
        1 + PER_BLOCK * self.n_layers
    }

    pub fn unembed(&self) -> usize {
        2 + PER_BLOCK * self.n_layers
    }

    pub fn range(&self, id: usize) -> std::ops::Range<usize> {
        let s = &self.specs[id];
        s.offset..s.offset + s.len
    }
}

/// Model weights in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T: Scalar> {
    pub cfg: ModelConfig,
    pub layout: ParamLayout,
    pub data: Vec<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let layout = ParamLayout::new(cfg);
        Self {
            cfg: cfg.clone(),
            data: vec![T::zero(); layout.total],
            layout,
        }
    }

    /// Gaussian init (std 0.02; residual-writing projections scaled by
    /// `1/sqrt(2 n_layers)`), unit norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut p = Self::zeros(cfg);
        let mut rng = SeedSpec::new(seed, 0x696e_6974).stream();
        let std = 0.02;
        let resid_std = std / (2.0 * cfg.n_layers as f64).sqrt();
        for id in 0..p.layout.specs.len() {
            let spec = p.layout.specs[id].clone();
            let is_gain = spec.shape.len() == 1;
            let is_resid = spec.name.ends_with("wo") || spec.name.ends_with("w_down");
            let dist = Normal::new(0.0, if is_resid { resid_std } else { std }).expect("finite std");
            for x in &mut p.data[spec.offset..spec.offset + spec.len] {
                *x = if is_gain { T::one() } else { T::of(dist.sample(&mut rng)) };
            }
        }
        Ok(p)
    }

    pub fn tensor(&self, id: usize) -> &[T] {
        &self.data[self.layout.range(id)]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut [T] {
        let r = self.layout.range(id);
        &mut self.data[r]
    }

    pub fn block(&self, layer: usize, t: BlockTensor) -> &[T] {
        self.tensor(self.layout.block(layer, t))
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            cfg: self.cfg.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| U::of(x.f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchSite {
    /// Output of the attention sublayer (after the output projection), before it
    /// is added to the residual stream.
    AttentionOutput,
    /// Residual stream after the block.
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchMode {
    Replace,
    Add,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub layer: usize,
    pub site: PatchSite,
    pub position: usize,
    pub vector: Vec<f64>,
    pub mode: PatchMode,
}

/// What to record and which interventions to apply during a forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceRequest {
    pub want_attention: bool,
    pub want_residuals: bool,
    /// Record attention-sublayer outputs (the function-vector extraction site).
    pub want_attn_out: bool,
    pub lens_layers: BTreeSet<usize>,
    pub ablate_blocks: BTreeSet<usize>,
    pub patches: Vec<Patch>,
}

impl TraceRequest {
    fn validate(&self, cfg: &ModelConfig, seq_len: usize) -> Result<()> {
        let bad_layer = self
            .lens_layers
            .iter()
            .chain(&self.ablate_blocks)
            .chain(self.patches.iter().map(|p| &p.layer))
            .find(|&&l| l >= cfg.n_layers);
        if let Some(l) = bad_layer {
            return Err(HlabError::Shape(format!(
                "layer {l} requested but the model has {} layers",
                cfg.n_layers
            )));
        }
        for p in &self.patches {
            if p.vector.len() != cfg.d_model {
                return Err(HlabError::Shape(format!(
                    "patch vector has {} entries, expected {}",
                    p.vector.len(),
                    cfg.d_model
                )));
            }
            if p.position >= seq_len {
                return Err(HlabError::Shape(format!(
                    "patch position {} beyond sequence length {seq_len}",
                    p.position
                )));
            }
        }
        Ok(())
    }
}

/// Recorded activations of one forward pass over a single sequence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace<T: Scalar> {
    pub seq_len: usize,
    pub n_heads: usize,
    /// `attention[layer]` is `heads × seq × seq`, row = query.
    pub attention: Vec<Vec<T>>,
    /// `residual[layer]` is `seq × d_model`, the stream after block `layer`.
    pub residual: Vec<Vec<T>>,
    /// `attn_out[layer]` is `seq × d_model`.
    pub attn_out: Vec<Vec<T>>,
    /// `(layer, seq × vocab)` logit-lens readouts.
    pub lens_logits: Vec<(usize, Vec<T>)>,
}

impl<T: Scalar> Trace<T> {
    pub fn attn(&self, layer: usize, head: usize, query: usize, key: usize) -> T {
        let t = self.seq_len;
        self.attention[layer][(head * t + query) * t + key]
    }

    pub fn lens(&self, layer: usize) -> Option<&[T]> {
        self.lens_logits
            .iter()
            .find(|(l, _)| *l == layer)
            .map(|(_, v)| v.as_slice())
    }
}

/// Activations kept for the backward pass.
pub(crate) struct LayerCache<T> {
    x_in: Vec<T>,
    rms1: Vec<T>,
    xn1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    attn_cat: Vec<T>,
    x_mid: Vec<T>,
    rms2: Vec<T>,
    xn2: Vec<T>,
    gate: Vec<T>,
    up: Vec<T>,
    act: Vec<T>,
}

pub(crate) struct Cache<T> {
    layers: Vec<LayerCache<T>>,
    x_final: Vec<T>,
    rms_f: Vec<T>,
    xn_f: Vec<T>,
    rope: Rope<T>,
}

pub(crate) struct Rope<T> {
    half: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Scalar> Rope<T> {
    fn new(seq_len: usize, head_dim: usize, base: f64) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(seq_len * half);
        let mut sin = Vec::with_capacity(seq_len * half);
        for pos in 0..seq_len {
            for i in 0..half {
                let theta = pos as f64 * base.powf(-2.0 * i as f64 / head_dim as f64);
                cos.push(T::of(theta.cos()));
                sin.push(T::of(theta.sin()));
            }
        }
        Self { half, cos, sin }
    }

    /// Rotates interleaved pairs of every head in `x` (`rows × d`), where row
    /// `r` sits at position `r % seq_len`. `inverse` applies the transpose.
    fn apply(&self, x: &mut [T], d: usize, seq_len: usize, inverse: bool) {
        let hd = 2 * self.half;
        for (r, row) in x.chunks_exact_mut(d).enumerate() {
            let pos = r % seq_len;
            let cs = &self.cos[pos * self.half..(pos + 1) * self.half];
            let sn = &self.sin[pos * self.half..(pos + 1) * self.half];
            for head in row.chunks_exact_mut(hd) {
                for i in 0..self.half {
                    let (a, b) = (head[2 * i], head[2 * i + 1]);
                    let (c, s) = (cs[i], if inverse { -sn[i] } else { sn[i] });
                    head[2 * i] = a * c - b * s;
                    head[2 * i + 1] = a * s + b * c;
                }
            }
        }
    }
}

pub(crate) fn rmsnorm<T: Scalar>(x: &[T], gain: &[T], eps: f64, out: &mut [T], rinv: &mut [T]) {
    let d = gain.len();
    let eps = T::of(eps);
    for ((row, o), r) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).zip(rinv.iter_mut()) {
        let ms = row.iter().map(|&v| v * v).sum::<T>() / T::of(d as f64);
        *r = T::one() / (ms + eps).sqrt();
        for ((o, &v), &g) in o.iter_mut().zip(row).zip(gain) {
            *o = v * *r * g;
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Batched forward over `batch × seq_len` tokens. Fills `cache` when given.
/// Returns logits (`batch·seq × vocab`) and, for `batch == 1`, the trace.
pub(crate) fn forward_batch<T: Scalar>(
    params: &Params<T>,
    tokens: &[u32],
    batch: usize,
    seq_len: usize,
    req: &TraceRequest,
    mut cache: Option<&mut Cache<T>>,
) -> Result<(Vec<T>, Trace<T>)> {
    let cfg = &params.cfg;
    let lay = &params.layout;
    let (d, nh, hd, hid, vocab) = (
        cfg.d_model,
        cfg.n_heads,
        cfg.head_dim(),
        cfg.hidden_dim(),
        cfg.vocab_size,
    );
    if tokens.len() != batch * seq_len {
        return Err(HlabError::Shape(format!(
            "{} tokens for a {batch}×{seq_len} batch",
            tokens.len()
        )));
    }
    if seq_len == 0 || seq_len > cfg.ctx_len {
        return Err(HlabError::Shape(format!(
            "sequence length {seq_len} outside 1..={}",
            cfg.ctx_len
        )));
    }
    if let Some(t) = tokens.iter().find(|&&t| t as usize >= vocab) {
        return Err(HlabError::Shape(format!("token {t} outside vocabulary {vocab}")));
    }
    req.validate(cfg, seq_len)?;
    let n = batch * seq_len;
    let tracing = batch == 1;
    let mut trace = Trace {
        seq_len,
        n_heads: nh,
        ..Trace::default()
    };

    let emb = params.tensor(lay.embed());
    let mut x = vec![T::zero(); n * d];
    for (row, &t) in x.chunks_exact_mut(d).zip(tokens) {
        row.copy_from_slice(&emb[t as usize * d..(t as usize + 1) * d]);
    }
    let rope = Rope::new(seq_len, hd, cfg.rotary_base);
    let scale = T::of(1.0 / (hd as f64).sqrt());

    for l in 0..cfg.n_layers {
        if req.ablate_blocks.contains(&l) {
            if tracing {
                if req.want_attention {
                    trace.attention.push(vec![T::zero(); nh * seq_len * seq_len]);
                }
                if req.want_attn_out {
                    trace.attn_out.push(vec![T::zero(); n * d]);
                }
            }
            apply_patches(req, l, PatchSite::Residual, &mut x, d, seq_len);
            finish_layer(params, req, l, &x, &mut trace, tracing)?;
            continue;
        }
        let x_in = x.clone();
        let mut rms1 = vec![T::zero(); n];
        let mut xn1 = vec![T::zero(); n * d];
        rmsnorm(&x, params.block(l, BlockTensor::AttnNorm), cfg.norm_eps, &mut xn1, &mut rms1);

        let mut q = vec![T::zero(); n * d];
        let mut k = vec![T::zero(); n * d];
        let mut v = vec![T::zero(); n * d];
        matmul(n, d, d, &xn1, false, params.block(l, BlockTensor::Wq), false, &mut q, false);
        matmul(n, d, d, &xn1, false, params.block(l, BlockTensor::Wk), false, &mut k, false);
        matmul(n, d, d, &xn1, false, params.block(l, BlockTensor::Wv), false, &mut v, false);
        rope.apply(&mut q, d, seq_len, false);
        rope.apply(&mut k, d, seq_len, false);

        let mut probs = vec![T::zero(); batch * nh * seq_len * seq_len];
        let mut attn_cat = vec![T::zero(); n * d];
        for b in 0..batch {
            for h in 0..nh {
                let base = b * seq_len * d + h * hd;
                let p = &mut probs[(b * nh + h) * seq_len * seq_len..][..seq_len * seq_len];
                T::gemm(
                    seq_len,
                    hd,
                    seq_len,
                    scale,
                    &q[base..],
                    d as isize,
                    1,
                    &k[base..],
                    1,
                    d as isize,
                    T::zero(),
                    p,
                    seq_len as isize,
                    1,
                );
                for i in 0..seq_len {
                    let row = &mut p[i * seq_len..(i + 1) * seq_len];
                    let m = row[..=i].iter().copied().fold(T::neg_infinity(), T::max);
                    let mut z = T::zero();
                    for s in &mut row[..=i] {
                        *s = (*s - m).exp();
                        z += *s;
                    }
                    for s in &mut row[..=i] {
                        *s /= z;
                    }
                    for s in &mut row[i + 1..] {
                        *s = T::zero();
                    }
                }
                T::gemm(
                    seq_len,
                    seq_len,
                    hd,
                    T::one(),
                    p,
                    seq_len as isize,
                    1,
                    &v[base..],
                    d as isize,
                    1,
                    T::zero(),
                    &mut attn_cat[base..],
                    d as isize,
                    1,
                );
            }
        }
        let mut a_out = vec![T::zero(); n * d];
        matmul(n, d, d, &attn_cat, false, params.block(l, BlockTensor::Wo), false, &mut a_out, false);
        apply_patches(req, l, PatchSite::AttentionOutput, &mut a_out, d, seq_len);
        if tracing {
            if req.want_attention {
                trace.attention.push(probs.clone());
            }
            if req.want_attn_out {
                trace.attn_out.push(a_out.clone());
            }
        }
        for (xi, ai) in x.iter_mut().zip(&a_out) {
            *xi += *ai;
        }
        let x_mid = x.clone();

        let mut rms2 = vec![T::zero(); n];
        let mut xn2 = vec![T::zero(); n * d];
        rmsnorm(&x, params.block(l, BlockTensor::MlpNorm), cfg.norm_eps, &mut xn2, &mut rms2);
        let mut gate = vec![T::zero(); n * hid];
        let mut up = vec![T::zero(); n * hid];
        matmul(n, d, hid, &xn2, false, params.block(l, BlockTensor::WGate), false, &mut gate, false);
        matmul(n, d, hid, &xn2, false, params.block(l, BlockTensor::WUp), false, &mut up, false);
        let act: Vec<T> = gate
            .iter()
            .zip(&up)
            .map(|(&g, &u)| g * sigmoid(g) * u)
            .collect();
        matmul(n, hid, d, &act, false, params.block(l, BlockTensor::WDown), false, &mut x, true);
        apply_patches(req, l, PatchSite::Residual, &mut x, d, seq_len);
        finish_layer(params, req, l, &x, &mut trace, tracing)?;

        if let Some(c) = cache.as_deref_mut() {
            c.layers.push(LayerCache {
                x_in,
                rms1,
                xn1,
                q,
                k,
                v,
                probs,
                attn_cat,
                x_mid,
                rms2,
                xn2,
                gate,
                up,
                act,
            });
        }
    }

    let mut rms_f = vec![T::zero(); n];
    let mut xn_f = vec![T::zero(); n * d];
    rmsnorm(&x, params.tensor(lay.final_norm()), cfg.norm_eps, &mut xn_f, &mut rms_f);
    let mut logits = vec![T::zero(); n * vocab];
    matmul(n, d, vocab, &xn_f, false, params.tensor(lay.unembed()), false, &mut logits, false);
    if let Some(c) = cache {
        c.x_final = x;
        c.rms_f = rms_f;
        c.xn_f = xn_f;
        c.rope = rope;
    }
    Ok((logits, trace))
}

fn apply_patches<T: Scalar>(
    req: &TraceRequest,
    layer: usize,
    site: PatchSite,
    buf: &mut [T],
    d: usize,
    seq_len: usize,
) {
    for p in req.patches.iter().filter(|p| p.layer == layer && p.site == site) {
        for seq_start in (0..buf.len() / d).step_by(seq_len) {
            let row = seq_start + p.position;
            for (o, &v) in buf[row * d..(row + 1) * d].iter_mut().zip(&p.vector) {
                match p.mode {
                    PatchMode::Replace => *o = T::of(v),
                    PatchMode::Add => *o += T::of(v),
                }
            }
        }
    }
}

fn finish_layer<T: Scalar>(
    params: &Params<T>,
    req: &TraceRequest,
    layer: usize,
    x: &[T],
    trace: &mut Trace<T>,
    tracing: bool,
) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(HlabError::NonFinite { layer });
    }
    if !tracing {
        return Ok(());
    }
    if req.want_residuals {
        trace.residual.push(x.to_vec());
    }
    if req.lens_layers.contains(&layer) {
        trace.lens_logits.push((layer, logit_lens_rows(params, x)));
    }
    Ok(())
}

/// `W_U · final_norm(row)` for every `d_model` row of `x`.
pub fn logit_lens_rows<T: Scalar>(params: &Params<T>, x: &[T]) -> Vec<T> {
    let (d, vocab) = (params.cfg.d_model, params.cfg.vocab_size);
    let rows = x.len() / d;
    let mut xn = vec![T::zero(); x.len()];
    let mut r = vec![T::zero(); rows];
    rmsnorm(x, params.tensor(params.layout.final_norm()), params.cfg.norm_eps, &mut xn, &mut r);
    let mut out = vec![T::zero(); rows * vocab];
    matmul(rows, d, vocab, &xn, false, params.tensor(params.layout.unembed()), false, &mut out, false);
    out
}

/// Logit lens for a single residual vector.
pub fn logit_lens<T: Scalar>(params: &Params<T>, residual: &[T]) -> Result<Vec<T>> {
    if residual.len() != params.cfg.d_model {
        return Err(HlabError::Shape(format!(
            "residual has {} entries, expected {}",
            residual.len(),
            params.cfg.d_model
        )));
    }
    Ok(logit_lens_rows(params, residual))
}

/// Forward over one sequence; logits are `seq × vocab`.
pub fn forward<T: Scalar>(
    params: &Params<T>,
    tokens: &[u32],
    req: &TraceRequest,
) -> Result<(Vec<T>, Trace<T>)> {
    forward_batch(params, tokens, 1, tokens.len(), req, None)
}

/// Batched inference forward returning only logits.
pub fn forward_logits<T: Scalar>(params: &Params<T>, tokens: &[u32], batch: usize) -> Result<Vec<T>> {
    let seq_len = tokens.len().checked_div(batch).unwrap_or(0);
    forward_batch(params, tokens, batch, seq_len, &TraceRequest::default(), None).map(|r| r.0)
}

#[cfg(test)]
mod tests;
