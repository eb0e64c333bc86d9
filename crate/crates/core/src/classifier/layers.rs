//! Per-example forward and backward primitives.
//!
//! Convolutions run row-at-a-time: each (output row, input row) pair is one
//! correlation pass with an unrolled fast path for the width-7 kernel, and
//! conv2 blocks output channels so an input row stays cache-hot across
//! several accumulators. Activation layouts are row-major: input `[2][N]`,
//! conv1 output `[c1][2][N]`, conv2 output `[c2][N]`.

#![allow(clippy::needless_range_loop)]

use super::{ModelParams, NormMode};
use crate::signal::IqTensor;

pub(crate) const BN_EPS: f64 = 1e-5;

/// Output channels sharing one pass over an input row in conv2.
const CHANNEL_BLOCK: usize = 16;

/// dst[n] += sum_t w[t] * src[n + t - pad], with src taken as zero outside
/// its bounds.
#[inline]
pub(crate) fn conv_row_acc(dst: &mut [f64], src: &[f64], w: &[f64], pad: usize) {
    let n = dst.len();
    let kw = w.len();
    debug_assert_eq!(n, src.len());
    debug_assert!(pad < kw);

    // Full-window region: n - pad >= 0 and n - pad + kw <= N.
    let core_lo = pad.min(n);
    let core_hi = (n + pad + 1).saturating_sub(kw).max(core_lo);

    for d in 0..core_lo {
        let mut acc = 0.0;
        for (t, &wt) in w.iter().enumerate() {
            let s = d as isize + t as isize - pad as isize;
            if s >= 0 && (s as usize) < n {
                acc += wt * src[s as usize];
            }
        }
        dst[d] += acc;
    }
    if let Ok(w7) = <&[f64; 7]>::try_from(w) {
        // Stencil form over a hoisted-bounds slice pair; vectorizes across
        // output positions.
        let dst_core = &mut dst[core_lo..core_hi];
        let m = dst_core.len();
        if m > 0 {
            let s = &src[..m + 6];
            for i in 0..m {
                dst_core[i] += w7[0] * s[i]
                    + w7[1] * s[i + 1]
                    + w7[2] * s[i + 2]
                    + w7[3] * s[i + 3]
                    + w7[4] * s[i + 4]
                    + w7[5] * s[i + 5]
                    + w7[6] * s[i + 6];
            }
        }
    } else {
        for (i, d) in dst[core_lo..core_hi].iter_mut().enumerate() {
            let win = &src[i..i + kw];
            let mut acc = 0.0;
            for (wt, sv) in w.iter().zip(win) {
                acc += wt * sv;
            }
            *d += acc;
        }
    }
    for d in core_hi..n {
        let mut acc = 0.0;
        for (t, &wt) in w.iter().enumerate() {
            let s = d as isize + t as isize - pad as isize;
            if s >= 0 && (s as usize) < n {
                acc += wt * src[s as usize];
            }
        }
        dst[d] += acc;
    }
}

/// Transposed pass: dst[m] += sum_t w[t] * src[m - t + pad], equivalent to
/// a forward pass with reversed taps and mirrored padding.
#[inline]
pub(crate) fn conv_row_acc_t(dst: &mut [f64], src: &[f64], w: &[f64], pad: usize) {
    let mut rev = [0.0; 16];
    let kw = w.len();
    debug_assert!(kw <= 16);
    for (r, &wt) in rev[..kw].iter_mut().zip(w.iter().rev()) {
        *r = wt;
    }
    conv_row_acc(dst, src, &rev[..kw], kw - 1 - pad);
}

/// sum_n a[n] * b[n + shift] over the valid overlap.
#[inline]
pub(crate) fn dot_shifted(a: &[f64], b: &[f64], shift: isize) -> f64 {
    let n = a.len() as isize;
    let lo = (-shift).max(0);
    let hi = (n - shift).min(n);
    if lo >= hi {
        return 0.0;
    }
    let (lo, hi) = (lo as usize, hi as usize);
    let xs = &a[lo..hi];
    let ys = &b[(lo as isize + shift) as usize..][..hi - lo];
    xs.iter().zip(ys).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Flatten an IQ tensor into `[2 * N]` (I row then Q row).
pub(crate) fn flatten_input(x: &IqTensor) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * x.len());
    out.extend_from_slice(&x.i);
    out.extend_from_slice(&x.q);
    out
}

/// conv1: kernel height 1 slides over both rows with shared weights.
/// Output `[c1][2][N]`, no bias.
pub(crate) fn conv1_fwd(params: &ModelParams, x: &[f64]) -> Vec<f64> {
    let cfg = &params.config;
    let (n, kw, pad, c1) = (cfg.input_size, cfg.kernel_width, cfg.pad(), cfg.conv1_channels);
    let mut out = vec![0.0; c1 * 2 * n];
    for c in 0..c1 {
        let w = &params.conv1_w[c * kw..][..kw];
        for r in 0..2 {
            let dst = &mut out[(c * 2 + r) * n..][..n];
            conv_row_acc(dst, &x[r * n..][..n], w, pad);
        }
    }
    out
}

/// conv1 transpose: gradient with respect to the input, `[2 * N]`.
pub(crate) fn conv1_bwd_data(params: &ModelParams, dz1: &[f64]) -> Vec<f64> {
    let cfg = &params.config;
    let (n, kw, pad, c1) = (cfg.input_size, cfg.kernel_width, cfg.pad(), cfg.conv1_channels);
    let mut dx = vec![0.0; 2 * n];
    for r in 0..2 {
        let dst = &mut dx[r * n..][..n];
        for c in 0..c1 {
            let w = &params.conv1_w[c * kw..][..kw];
            conv_row_acc_t(dst, &dz1[(c * 2 + r) * n..][..n], w, pad);
        }
    }
    dx
}

/// Per-example conv1 weight gradient, `[c1 * kw]`.
pub(crate) fn conv1_grad_weights(params: &ModelParams, dz1: &[f64], x: &[f64]) -> Vec<f64> {
    let cfg = &params.config;
    let (n, kw, pad, c1) = (cfg.input_size, cfg.kernel_width, cfg.pad(), cfg.conv1_channels);
    let mut dw = vec![0.0; c1 * kw];
    for c in 0..c1 {
        for r in 0..2 {
            let g = &dz1[(c * 2 + r) * n..][..n];
            let src = &x[r * n..][..n];
            for t in 0..kw {
                dw[c * kw + t] += dot_shifted(g, src, t as isize - pad as isize);
            }
        }
    }
    dw
}

/// conv2: kernel height 2 consumes both rows, producing `[c2][N]` plus bias.
pub(crate) fn conv2_fwd(params: &ModelParams, a1: &[f64]) -> Vec<f64> {
    let cfg = &params.config;
    let (n, kw, pad) = (cfg.input_size, cfg.kernel_width, cfg.pad());
    let (c1, c2) = (cfg.conv1_channels, cfg.conv2_channels);
    let mut out = vec![0.0; c2 * n];
    for (o, row) in out.chunks_mut(n).enumerate() {
        row.fill(params.conv2_b[o]);
    }
    let mut block_start = 0;
    while block_start < c2 {
        let block_end = (block_start + CHANNEL_BLOCK).min(c2);
        for cr in 0..c1 * 2 {
            let src = &a1[cr * n..][..n];
            for o in block_start..block_end {
                let w = &params.conv2_w[(o * c1 * 2 + cr) * kw..][..kw];
                conv_row_acc(&mut out[o * n..][..n], src, w, pad);
            }
        }
        block_start = block_end;
    }
    out
}

/// conv2 transpose: gradient with respect to its input, `[c1][2][N]`.
pub(crate) fn conv2_bwd_data(params: &ModelParams, dz2: &[f64]) -> Vec<f64> {
    let cfg = &params.config;
    let (n, kw, pad) = (cfg.input_size, cfg.kernel_width, cfg.pad());
    let (c1, c2) = (cfg.conv1_channels, cfg.conv2_channels);
    let mut da1 = vec![0.0; c1 * 2 * n];
    for cr in 0..c1 * 2 {
        let dst = &mut da1[cr * n..][..n];
        for o in 0..c2 {
            let w = &params.conv2_w[(o * c1 * 2 + cr) * kw..][..kw];
            conv_row_acc_t(dst, &dz2[o * n..][..n], w, pad);
        }
    }
    da1
}

/// Accumulate a block of output channels' conv2 weight gradients from one
/// example. `dw_block` covers channels `o_start..o_start + block` laid out
/// as `[block][c1 * 2][kw]`; each a1 row is read once for the whole block.
pub(crate) fn conv2_grad_weights_block(
    params: &ModelParams,
    o_start: usize,
    dz2: &[f64],
    a1: &[f64],
    dw_block: &mut [f64],
) {
    let cfg = &params.config;
    let (n, kw, pad, c1) = (cfg.input_size, cfg.kernel_width, cfg.pad(), cfg.conv1_channels);
    let row_len = c1 * 2 * kw;
    let block = dw_block.len() / row_len;
    for cr in 0..c1 * 2 {
        let src = &a1[cr * n..][..n];
        for local in 0..block {
            let g = &dz2[(o_start + local) * n..][..n];
            let dst = &mut dw_block[local * row_len + cr * kw..][..kw];
            if kw == 7 && n > 7 {
                // One pass over the interior with seven running sums; the
                // per-tap edge terms are added separately.
                let mut acc = [0.0f64; 7];
                for i in pad..n - (6 - pad) {
                    let gi = g[i];
                    let base = i - pad;
                    let win = &src[base..base + 7];
                    acc[0] += gi * win[0];
                    acc[1] += gi * win[1];
                    acc[2] += gi * win[2];
                    acc[3] += gi * win[3];
                    acc[4] += gi * win[4];
                    acc[5] += gi * win[5];
                    acc[6] += gi * win[6];
                }
                for (t, d) in dst.iter_mut().enumerate() {
                    let shift = t as isize - pad as isize;
                    let mut edge = 0.0;
                    for i in (0..pad).chain(n - (6 - pad)..n) {
                        let s = i as isize + shift;
                        if s >= 0 && (s as usize) < n {
                            edge += g[i] * src[s as usize];
                        }
                    }
                    *d += acc[t] + edge;
                }
            } else {
                for (t, d) in dst.iter_mut().enumerate() {
                    *d += dot_shifted(g, src, t as isize - pad as isize);
                }
            }
        }
    }
}

/// Dense layer forward: `y[u] = b[u] + w[u] . x`.
pub(crate) fn fc_fwd(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let in_dim = x.len();
    b.iter()
        .enumerate()
        .map(|(u, &bias)| {
            let row = &w[u * in_dim..][..in_dim];
            bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Dense layer input gradient: `dx[j] = sum_u dy[u] * w[u][j]`.
pub(crate) fn fc_bwd_data(w: &[f64], dy: &[f64], in_dim: usize) -> Vec<f64> {
    let mut dx = vec![0.0; in_dim];
    for (u, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &w[u * in_dim..][..in_dim];
        for (d, &wv) in dx.iter_mut().zip(row) {
            *d += g * wv;
        }
    }
    dx
}

/// Inference batch-norm over per-channel rows of width `n` (n = 1 gives the
/// dense-layer case).
pub(crate) fn bn_infer(
    z: &mut [f64],
    n: usize,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
) {
    for (ch, row) in z.chunks_mut(n).enumerate() {
        let factor = gamma[ch] / (var[ch] + BN_EPS).sqrt();
        let shift = beta[ch] - mean[ch] * factor;
        for v in row {
            *v = *v * factor + shift;
        }
    }
}

/// Inference batch-norm backward: dy scaled by gamma / sqrt(var + eps).
pub(crate) fn bn_infer_bwd(dy: &mut [f64], n: usize, gamma: &[f64], var: &[f64]) {
    for (ch, row) in dy.chunks_mut(n).enumerate() {
        let factor = gamma[ch] / (var[ch] + BN_EPS).sqrt();
        for v in row {
            *v *= factor;
        }
    }
}

/// Zero entries of `dst` where the post-activation is zero (ReLU mask).
#[inline]
pub(crate) fn relu_mask(dst: &mut [f64], post: &[f64]) {
    for (d, &a) in dst.iter_mut().zip(post) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Stable cross-entropy of one logit row.
pub(crate) fn cross_entropy(row: &[f64], label: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    lse - row[label]
}

/// Gradient of the scaled cross-entropy with respect to the logits:
/// `scale * (softmax - onehot)`.
pub(crate) fn softmax_grad(row: &[f64], label: usize, scale: f64) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    let mut g: Vec<f64> = exps.iter().map(|&e| scale * e / denom).collect();
    g[label] -= scale;
    g
}

/// Activations of an inference-mode pass, kept for backward passes.
pub(crate) struct Acts {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Inference-mode forward pass for one example.
pub(crate) fn forward_example(params: &ModelParams, input: &IqTensor) -> Acts {
    let cfg = &params.config;
    let n = cfg.input_size;
    let x = flatten_input(input);

    let mut a1 = conv1_fwd(params, &x);
    relu_inplace(&mut a1);

    let mut a2 = conv2_fwd(params, &a1);
    if let Some(bn) = &params.bn {
        bn_infer(&mut a2, n, &bn.bn1_gamma, &bn.bn1_beta, &bn.bn1_mean, &bn.bn1_var);
    }
    relu_inplace(&mut a2);

    let mut a3 = fc_fwd(&params.fc1_w, &params.fc1_b, &a2);
    if let Some(bn) = &params.bn {
        bn_infer(&mut a3, 1, &bn.bn2_gamma, &bn.bn2_beta, &bn.bn2_mean, &bn.bn2_var);
    }
    relu_inplace(&mut a3);

    let logits = fc_fwd(&params.fc2_w, &params.fc2_b, &a3);
    debug_assert_eq!(matches!(cfg.norm_mode, NormMode::Dropout), params.bn.is_none());
    Acts { a1, a2, a3, logits }
}

/// Inference-mode gradient of `scale * cross_entropy` with respect to the
/// input of one example, `[2 * N]`.
pub(crate) fn input_gradient_example(
    params: &ModelParams,
    input: &IqTensor,
    label: usize,
    scale: f64,
) -> Vec<f64> {
    let cfg = &params.config;
    let n = cfg.input_size;
    let acts = forward_example(params, input);

    let dlogits = softmax_grad(&acts.logits, label, scale);
    let mut da3 = fc_bwd_data(&params.fc2_w, &dlogits, cfg.fc1_units);
    relu_mask(&mut da3, &acts.a3);
    if let Some(bn) = &params.bn {
        bn_infer_bwd(&mut da3, 1, &bn.bn2_gamma, &bn.bn2_var);
    }

    let mut da2 = fc_bwd_data(&params.fc1_w, &da3, cfg.flat_len());
    relu_mask(&mut da2, &acts.a2);
    if let Some(bn) = &params.bn {
        bn_infer_bwd(&mut da2, n, &bn.bn1_gamma, &bn.bn1_var);
    }

    let mut da1 = conv2_bwd_data(params, &da2);
    relu_mask(&mut da1, &acts.a1);
    conv1_bwd_data(params, &da1)
}
