// SPDX-License-Identifier: MIT OR Apache-2.0

//! Masked next-token cross-entropy and its hand-written gradient.

use super::{forward_batch, matmul, sigmoid, BlockTensor, Cache, Params, Rope, Scalar, TraceRequest};
use crate::corpus::Batch;
use crate::error::{HlabError, Result};

/// Softmax cross-entropy over masked rows. Writes `dlogits` (already scaled
/// by `1 / count`) when requested and returns the mean loss.
fn cross_entropy<T: Scalar>(
    logits: &[T],
    targets: &[u32],
    mask: &[u8],
    vocab: usize,
    mut dlogits: Option<&mut [T]>,
) -> f64 {
    let count = mask.iter().filter(|&&m| m != 0).count();
    if count == 0 {
        return 0.0;
    }
    let inv = T::of(1.0 / count as f64);
    let mut total = 0.0f64;
    for (r, row) in logits.chunks_exact(vocab).enumerate() {
        if mask[r] == 0 {
            continue;
        }
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + z.ln();
        let y = targets[r] as usize;
        total += (lse - row[y]).f64();
        if let Some(d) = dlogits.as_deref_mut() {
            let drow = &mut d[r * vocab..(r + 1) * vocab];
            for (o, &v) in drow.iter_mut().zip(row) {
                *o = (v - lse).exp() * inv;
            }
            drow[y] -= inv;
        }
    }
    total / count as f64
}

/// Mean masked next-token negative log-likelihood without gradients.
pub fn mean_loss<T: Scalar>(params: &Params<T>, batch: &Batch) -> Result<f64> {
    let (logits, _) = forward_batch(
        params,
        &batch.inputs,
        batch.batch_size,
        batch.ctx_len,
        &TraceRequest::default(),
        None,
    )?;
    let loss = cross_entropy(&logits, &batch.targets, &batch.mask, params.cfg.vocab_size, None);
    if !loss.is_finite() {
        return Err(HlabError::Divergence { step: 0 });
    }
    Ok(loss)
}

/// Mean masked loss and its gradient with respect to every parameter.
pub fn loss_and_grads<T: Scalar>(params: &Params<T>, batch: &Batch) -> Result<(f64, Params<T>)> {
    let cfg = &params.cfg;
    let lay = &params.layout;
    let (bsz, t) = (batch.batch_size, batch.ctx_len);
    let (d, nh, hd, hid, vocab) = (
        cfg.d_model,
        cfg.n_heads,
        cfg.head_dim(),
        cfg.hidden_dim(),
        cfg.vocab_size,
    );
    let n = bsz * t;
    let mut cache = Cache {
        layers: Vec::with_capacity(cfg.n_layers),
        x_final: Vec::new(),
        rms_f: Vec::new(),
        xn_f: Vec::new(),
        rope: Rope {
            half: 0,
            cos: Vec::new(),
            sin: Vec::new(),
        },
    };
    let (logits, _) = forward_batch(
        params,
        &batch.inputs,
        bsz,
        t,
        &TraceRequest::default(),
        Some(&mut cache),
    )?;
    let mut dlogits = vec![T::zero(); n * vocab];
    let loss = cross_entropy(&logits, &batch.targets, &batch.mask, vocab, Some(&mut dlogits));
    if !loss.is_finite() {
        return Err(HlabError::Divergence { step: 0 });
    }
    drop(logits);

    let mut g = Params::<T>::zeros(cfg);

    // Unembedding and final norm.
    {
        let r = lay.range(lay.unembed());
        matmul(d, n, vocab, &cache.xn_f, true, &dlogits, false, &mut g.data[r], false);
    }
    let mut dxn = vec![T::zero(); n * d];
    matmul(n, vocab, d, &dlogits, false, params.tensor(lay.unembed()), true, &mut dxn, false);
    drop(dlogits);
    let mut dx = vec![T::zero(); n * d];
    rmsnorm_backward(
        &cache.x_final,
        params.tensor(lay.final_norm()),
        &cache.rms_f,
        &dxn,
        &mut dx,
        g.tensor_mut(lay.final_norm()),
    );

    let scale = T::of(1.0 / (hd as f64).sqrt());
    for l in (0..cfg.n_layers).rev() {
        let c = &cache.layers[l];
        let gid = |bt| lay.range(lay.block(l, bt));

        // Gated MLP: out = (silu(gate) * up) @ w_down
        matmul(hid, n, d, &c.act, true, &dx, false, &mut g.data[gid(BlockTensor::WDown)], false);
        let mut dact = vec![T::zero(); n * hid];
        matmul(n, d, hid, &dx, false, params.block(l, BlockTensor::WDown), true, &mut dact, false);
        let mut dgate = vec![T::zero(); n * hid];
        let mut dup = vec![T::zero(); n * hid];
        for i in 0..n * hid {
            let (gv, uv) = (c.gate[i], c.up[i]);
            let s = sigmoid(gv);
            dup[i] = dact[i] * gv * s;
            dgate[i] = dact[i] * uv * s * (T::one() + gv * (T::one() - s));
        }
        drop(dact);
        matmul(d, n, hid, &c.xn2, true, &dgate, false, &mut g.data[gid(BlockTensor::WGate)], false);
        matmul(d, n, hid, &c.xn2, true, &dup, false, &mut g.data[gid(BlockTensor::WUp)], false);
        let mut dxn2 = vec![T::zero(); n * d];
        matmul(n, hid, d, &dgate, false, params.block(l, BlockTensor::WGate), true, &mut dxn2, false);
        matmul(n, hid, d, &dup, false, params.block(l, BlockTensor::WUp), true, &mut dxn2, true);
        let mut dx_norm = vec![T::zero(); n * d];
        rmsnorm_backward(
            &c.x_mid,
            params.block(l, BlockTensor::MlpNorm),
            &c.rms2,
            &dxn2,
            &mut dx_norm,
            &mut g.data[gid(BlockTensor::MlpNorm)],
        );
        for (a, b) in dx.iter_mut().zip(&dx_norm) {
            *a += *b;
        }

        // Attention output projection.
        matmul(d, n, d, &c.attn_cat, true, &dx, false, &mut g.data[gid(BlockTensor::Wo)], false);
        let mut dcat = vec![T::zero(); n * d];
        matmul(n, d, d, &dx, false, params.block(l, BlockTensor::Wo), true, &mut dcat, false);

        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        let mut dp = vec![T::zero(); t * t];
        for b in 0..bsz {
            for h in 0..nh {
                let base = b * t * d + h * hd;
                let p = &c.probs[(b * nh + h) * t * t..][..t * t];
                // dP = dO V^T
                T::gemm(
                    t, hd, t, T::one(),
                    &dcat[base..], d as isize, 1,
                    &c.v[base..], 1, d as isize,
                    T::zero(), &mut dp, t as isize, 1,
                );
                // dV = P^T dO
                T::gemm(
                    t, t, hd, T::one(),
                    p, 1, t as isize,
                    &dcat[base..], d as isize, 1,
                    T::zero(), &mut dv[base..], d as isize, 1,
                );
                // dS = P * (dP - rowsum(dP * P)), scaled for the score product.
                for i in 0..t {
                    let prow = &p[i * t..(i + 1) * t];
                    let drow = &mut dp[i * t..(i + 1) * t];
                    let dot: T = prow[..=i].iter().zip(&drow[..=i]).map(|(&a, &b)| a * b).sum();
                    for j in 0..=i {
                        drow[j] = prow[j] * (drow[j] - dot) * scale;
                    }
                    for v in &mut drow[i + 1..] {
                        *v = T::zero();
                    }
                }
                // dQ = dS K, dK = dS^T Q
                T::gemm(
                    t, t, hd, T::one(),
                    &dp, t as isize, 1,
                    &c.k[base..], d as isize, 1,
                    T::zero(), &mut dq[base..], d as isize, 1,
                );
                T::gemm(
                    t, t, hd, T::one(),
                    &dp, 1, t as isize,
                    &c.q[base..], d as isize, 1,
                    T::zero(), &mut dk[base..], d as isize, 1,
                );
            }
        }
        cache.rope.apply(&mut dq, d, t, true);
        cache.rope.apply(&mut dk, d, t, true);
        matmul(d, n, d, &c.xn1, true, &dq, false, &mut g.data[gid(BlockTensor::Wq)], false);
        matmul(d, n, d, &c.xn1, true, &dk, false, &mut g.data[gid(BlockTensor::Wk)], false);
        matmul(d, n, d, &c.xn1, true, &dv, false, &mut g.data[gid(BlockTensor::Wv)], false);
        let mut dxn1 = vec![T::zero(); n * d];
        matmul(n, d, d, &dq, false, params.block(l, BlockTensor::Wq), true, &mut dxn1, false);
        matmul(n, d, d, &dk, false, params.block(l, BlockTensor::Wk), true, &mut dxn1, true);
        matmul(n, d, d, &dv, false, params.block(l, BlockTensor::Wv), true, &mut dxn1, true);
        rmsnorm_backward(
            &c.x_in,
            params.block(l, BlockTensor::AttnNorm),
            &c.rms1,
            &dxn1,
            &mut dx_norm,
            &mut g.data[gid(BlockTensor::AttnNorm)],
        );
        for (a, b) in dx.iter_mut().zip(&dx_norm) {
            *a += *b;
        }
    }

    let emb = lay.range(lay.embed());
    let gemb = &mut g.data[emb];
    for (row, &tok) in dx.chunks_exact(d).zip(&batch.inputs) {
        let dst = &mut gemb[tok as usize * d..(tok as usize + 1) * d];
        for (o, &v) in dst.iter_mut().zip(row) {
            *o += v;
        }
    }
    Ok((loss, g))
}

/// Backward of `y = x * r * gain`, `r = 1/sqrt(mean(x^2) + eps)`.
/// Overwrites `dx`, accumulates into `dgain`.
fn rmsnorm_backward<T: Scalar>(x: &[T], gain: &[T], rinv: &[T], dy: &[T], dx: &mut [T], dgain: &mut [T]) {
    let d = gain.len();
    let inv_d = T::of(1.0 / d as f64);
    for (((xr, dyr), dxr), &r) in x
        .chunks_exact(d)
        .zip(dy.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .zip(rinv)
    {
        let mut dot = T::zero();
        for i in 0..d {
            dgain[i] += dyr[i] * xr[i] * r;
            dot += dyr[i] * gain[i] * xr[i];
        }
        let k = r * r * r * dot * inv_d;
        for i in 0..d {
            dxr[i] = r * dyr[i] * gain[i] - k * xr[i];
        }
    }
}
