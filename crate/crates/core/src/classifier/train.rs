//! Adam training loop with early stopping on validation loss.
//!
//! Determinism contract: given equal seeds the trained parameters are
//! bit-for-bit identical regardless of thread count. Parallelism only ever
//! splits work across disjoint outputs (examples in forward passes, output
//! rows in weight-gradient accumulation); every reduction over the batch
//! runs in fixed example order.

use rayon::prelude::*;

use super::layers::{self, BN_EPS};
use super::{BatchNormParams, Example, ModelConfig, ModelParams, NormMode};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Examples per chunk when accumulating convolution weight gradients; bounds
/// the transient storage of conv1 activations. Fixed, so results do not
/// depend on available parallelism.
const CONV_CHUNK: usize = 32;

const TAG_INIT: u64 = 0x7472_0001;
const TAG_SHUFFLE: u64 = 0x7472_0002;
const TAG_DROPOUT: u64 = 0x7472_0003;

/// Optimizer and schedule settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 512,
            early_stop_patience: 5,
            max_epochs: 50,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if self.max_epochs == 0 || self.early_stop_patience == 0 {
            return Err(Error::invalid("epoch and patience counts must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Parameter gradients in the same layout as [`ModelParams`]. Batch-norm
/// entries are empty in dropout mode.
pub(crate) struct ParamGrads {
    pub conv1_w: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
    pub bn1_gamma: Vec<f64>,
    pub bn1_beta: Vec<f64>,
    pub bn2_gamma: Vec<f64>,
    pub bn2_beta: Vec<f64>,
}

/// Batch statistics needed to update running batch-norm estimates.
pub(crate) struct BnBatchStats {
    pub mean1: Vec<f64>,
    pub var1: Vec<f64>,
    pub mean2: Vec<f64>,
    pub var2: Vec<f64>,
}

pub(crate) struct BatchOutput {
    pub loss: f64,
    pub grads: ParamGrads,
    pub bn_stats: Option<BnBatchStats>,
}

/// Identifies the dropout substream of one batch.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MaskSeed {
    pub seed: u64,
    pub epoch: u64,
    pub batch: u64,
}

fn gen_mask(rng: &mut Rng, len: usize, rate: f64) -> Vec<u64> {
    let words = len.div_ceil(64);
    let mut mask = vec![0u64; words];
    for bit in 0..len {
        if rng.next_f64() >= rate {
            mask[bit / 64] |= 1 << (bit % 64);
        }
    }
    mask
}

fn apply_mask(v: &mut [f64], mask: &[u64], inv_keep: f64) {
    for (bit, x) in v.iter_mut().enumerate() {
        if mask[bit / 64] >> (bit % 64) & 1 == 1 {
            *x *= inv_keep;
        } else {
            *x = 0.0;
        }
    }
}

/// ReLU(+dropout) backward: keep gradient where the stored post-activation
/// is positive, scaled by `inv_keep` (1.0 when dropout is off).
fn masked_scale(grad: &mut [f64], post: &[f64], inv_keep: f64) {
    for (g, &a) in grad.iter_mut().zip(post) {
        if a > 0.0 {
            *g *= inv_keep;
        } else {
            *g = 0.0;
        }
    }
}

/// Training-mode forward/backward over one batch.
pub(crate) fn batch_forward_backward(
    params: &ModelParams,
    xs: &[Vec<f64>],
    labels: &[usize],
    mask_seed: MaskSeed,
) -> BatchOutput {
    let cfg = &params.config;
    let n = cfg.input_size;
    let (c1, c2) = (cfg.conv1_channels, cfg.conv2_channels);
    let flat = cfg.flat_len();
    let b_total = xs.len();
    let dropout = cfg.norm_mode == NormMode::Dropout;
    let rate = cfg.dropout_rate;
    let inv_keep = if dropout { 1.0 / (1.0 - rate) } else { 1.0 };

    // Per-example dropout masks for the three hidden activations, derived
    // from (seed, epoch, batch, example, layer) so they are reproducible.
    let masks: Vec<[Vec<u64>; 3]> = if dropout {
        (0..b_total)
            .into_par_iter()
            .map(|b| {
                let mk = |layer: u64, len: usize| {
                    let mut rng = Rng::from_tags(
                        mask_seed.seed,
                        &[TAG_DROPOUT, mask_seed.epoch, mask_seed.batch, b as u64, layer],
                    );
                    gen_mask(&mut rng, len, rate)
                };
                [mk(0, c1 * 2 * n), mk(1, c2 * n), mk(2, cfg.fc1_units)]
            })
            .collect()
    } else {
        Vec::new()
    };

    let run_a1 = |b: usize| -> Vec<f64> {
        let mut a1 = layers::conv1_fwd(params, &xs[b]);
        layers::relu_inplace(&mut a1);
        if dropout {
            apply_mask(&mut a1, &masks[b][0], inv_keep);
        }
        a1
    };

    // Pre-normalization conv2 outputs for the whole batch (needed for the
    // batch statistics and their backward pass).
    let z2_all: Vec<Vec<f64>> = (0..b_total)
        .into_par_iter()
        .map(|b| layers::conv2_fwd(params, &run_a1(b)))
        .collect();

    // Batch statistics over (example, position) per conv2 channel.
    let bn = params.bn.as_ref();
    let (mean1, var1) = match bn {
        Some(_) => batch_stats_rows(&z2_all, c2, n),
        None => (Vec::new(), Vec::new()),
    };

    let a2_all: Vec<Vec<f64>> = z2_all
        .par_iter()
        .enumerate()
        .map(|(b, z2)| {
            let mut a2 = z2.clone();
            if let Some(bn) = bn {
                normalize_rows(&mut a2, n, &mean1, &var1, &bn.bn1_gamma, &bn.bn1_beta);
            }
            layers::relu_inplace(&mut a2);
            if dropout {
                apply_mask(&mut a2, &masks[b][1], inv_keep);
            }
            a2
        })
        .collect();

    let z3_all: Vec<Vec<f64>> = a2_all
        .par_iter()
        .map(|a2| layers::fc_fwd(&params.fc1_w, &params.fc1_b, a2))
        .collect();

    let (mean2, var2) = match bn {
        Some(_) => batch_stats_rows(&z3_all, cfg.fc1_units, 1),
        None => (Vec::new(), Vec::new()),
    };

    let a3_all: Vec<Vec<f64>> = z3_all
        .par_iter()
        .enumerate()
        .map(|(b, z3)| {
            let mut a3 = z3.clone();
            if let Some(bn) = bn {
                normalize_rows(&mut a3, 1, &mean2, &var2, &bn.bn2_gamma, &bn.bn2_beta);
            }
            layers::relu_inplace(&mut a3);
            if dropout {
                apply_mask(&mut a3, &masks[b][2], inv_keep);
            }
            a3
        })
        .collect();

    let logits_all: Vec<Vec<f64>> = a3_all
        .par_iter()
        .map(|a3| layers::fc_fwd(&params.fc2_w, &params.fc2_b, a3))
        .collect();

    let loss = logits_all
        .iter()
        .zip(labels)
        .map(|(row, &label)| layers::cross_entropy(row, label))
        .sum::<f64>()
        / b_total as f64;

    // ---- backward ----
    let scale = 1.0 / b_total as f64;
    let dlogits: Vec<Vec<f64>> = logits_all
        .par_iter()
        .zip(labels.par_iter())
        .map(|(row, &label)| layers::softmax_grad(row, label, scale))
        .collect();

    // fc2 weight/bias gradients: parallel over class rows, serial over the
    // batch.
    let k = cfg.num_classes;
    let mut fc2_w_g = vec![0.0; k * cfg.fc1_units];
    fc2_w_g
        .par_chunks_mut(cfg.fc1_units)
        .enumerate()
        .for_each(|(kk, row)| {
            for b in 0..b_total {
                let g = dlogits[b][kk];
                if g != 0.0 {
                    for (d, &a) in row.iter_mut().zip(&a3_all[b]) {
                        *d += g * a;
                    }
                }
            }
        });
    let fc2_b_g: Vec<f64> = (0..k)
        .map(|kk| (0..b_total).map(|b| dlogits[b][kk]).sum())
        .collect();

    let mut dy3_all: Vec<Vec<f64>> = dlogits
        .par_iter()
        .zip(a3_all.par_iter())
        .map(|(dl, a3)| {
            let mut da3 = layers::fc_bwd_data(&params.fc2_w, dl, cfg.fc1_units);
            masked_scale(&mut da3, a3, inv_keep);
            da3
        })
        .collect();

    // Batch-norm backward for the dense layer; transforms dy3 into dz3.
    let (bn2_gamma_g, bn2_beta_g) = match bn {
        Some(bnp) => bn_backward(
            &mut dy3_all,
            &z3_all,
            1,
            &mean2,
            &var2,
            &bnp.bn2_gamma,
        ),
        None => (Vec::new(), Vec::new()),
    };
    let dz3_all = dy3_all;

    let mut fc1_w_g = vec![0.0; cfg.fc1_units * flat];
    fc1_w_g
        .par_chunks_mut(flat)
        .enumerate()
        .for_each(|(u, row)| {
            for b in 0..b_total {
                let g = dz3_all[b][u];
                if g != 0.0 {
                    for (d, &a) in row.iter_mut().zip(&a2_all[b]) {
                        *d += g * a;
                    }
                }
            }
        });
    let fc1_b_g: Vec<f64> = (0..cfg.fc1_units)
        .map(|u| (0..b_total).map(|b| dz3_all[b][u]).sum())
        .collect();

    let mut dy2_all: Vec<Vec<f64>> = dz3_all
        .par_iter()
        .zip(a2_all.par_iter())
        .map(|(dz3, a2)| {
            let mut da2 = layers::fc_bwd_data(&params.fc1_w, dz3, flat);
            masked_scale(&mut da2, a2, inv_keep);
            da2
        })
        .collect();

    let (bn1_gamma_g, bn1_beta_g) = match bn {
        Some(bnp) => bn_backward(&mut dy2_all, &z2_all, n, &mean1, &var1, &bnp.bn1_gamma),
        None => (Vec::new(), Vec::new()),
    };
    let dz2_all = dy2_all;

    let conv2_b_g: Vec<f64> = (0..c2)
        .map(|o| {
            (0..b_total)
                .map(|b| dz2_all[b][o * n..][..n].iter().sum::<f64>())
                .sum()
        })
        .collect();

    // Convolution weight gradients, chunked so conv1 activations are only
    // materialized CONV_CHUNK examples at a time. Output channels are
    // grouped in blocks that share each a1 pass.
    let mut conv2_w_g = vec![0.0; c2 * c1 * 2 * cfg.kernel_width];
    let mut conv1_w_g = vec![0.0; c1 * cfg.kernel_width];
    let row_len = c1 * 2 * cfg.kernel_width;
    let o_block = 8usize;
    let mut chunk_start = 0;
    while chunk_start < b_total {
        let chunk: Vec<usize> = (chunk_start..(chunk_start + CONV_CHUNK).min(b_total)).collect();
        let a1_store: Vec<Vec<f64>> = chunk.par_iter().map(|&b| run_a1(b)).collect();

        conv2_w_g
            .par_chunks_mut(row_len * o_block)
            .enumerate()
            .for_each(|(block_idx, dw_block)| {
                for (local, &b) in chunk.iter().enumerate() {
                    layers::conv2_grad_weights_block(
                        params,
                        block_idx * o_block,
                        &dz2_all[b],
                        &a1_store[local],
                        dw_block,
                    );
                }
            });

        let conv1_partials: Vec<Vec<f64>> = chunk
            .par_iter()
            .enumerate()
            .map(|(local, &b)| {
                let mut da1 = layers::conv2_bwd_data(params, &dz2_all[b]);
                masked_scale(&mut da1, &a1_store[local], inv_keep);
                layers::conv1_grad_weights(params, &da1, &xs[b])
            })
            .collect();
        for partial in &conv1_partials {
            for (d, &g) in conv1_w_g.iter_mut().zip(partial) {
                *d += g;
            }
        }
        chunk_start += CONV_CHUNK;
    }

    let bn_stats = bn.map(|_| BnBatchStats {
        mean1,
        var1,
        mean2,
        var2,
    });

    BatchOutput {
        loss,
        grads: ParamGrads {
            conv1_w: conv1_w_g,
            conv2_w: conv2_w_g,
            conv2_b: conv2_b_g,
            fc1_w: fc1_w_g,
            fc1_b: fc1_b_g,
            fc2_w: fc2_w_g,
            fc2_b: fc2_b_g,
            bn1_gamma: bn1_gamma_g,
            bn1_beta: bn1_beta_g,
            bn2_gamma: bn2_gamma_g,
            bn2_beta: bn2_beta_g,
        },
        bn_stats,
    }
}

/// Mean and biased variance per channel over (example, position).
fn batch_stats_rows(data: &[Vec<f64>], channels: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (data.len() * n) as f64;
    let stats: Vec<(f64, f64)> = (0..channels)
        .into_par_iter()
        .map(|ch| {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for row in data {
                for &v in &row[ch * n..][..n] {
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let mean = sum / m;
            (mean, (sum_sq / m - mean * mean).max(0.0))
        })
        .collect();
    stats.into_iter().unzip()
}

/// Training-mode normalization with batch statistics.
fn normalize_rows(
    z: &mut [f64],
    n: usize,
    mean: &[f64],
    var: &[f64],
    gamma: &[f64],
    beta: &[f64],
) {
    for (ch, row) in z.chunks_mut(n).enumerate() {
        let inv_std = 1.0 / (var[ch] + BN_EPS).sqrt();
        let factor = gamma[ch] * inv_std;
        let shift = beta[ch] - mean[ch] * factor;
        for v in row {
            *v = *v * factor + shift;
        }
    }
}

/// Training-mode batch-norm backward. `dy` is transformed in place into the
/// gradient with respect to the pre-normalization values; returns
/// (dgamma, dbeta).
fn bn_backward(
    dy: &mut [Vec<f64>],
    z: &[Vec<f64>],
    n: usize,
    mean: &[f64],
    var: &[f64],
    gamma: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let channels = mean.len();
    let m = (dy.len() * n) as f64;

    // Per-channel sums in fixed (example, position) order.
    let sums: Vec<(f64, f64)> = (0..channels)
        .into_par_iter()
        .map(|ch| {
            let inv_std = 1.0 / (var[ch] + BN_EPS).sqrt();
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for (dyb, zb) in dy.iter().zip(z) {
                let g = &dyb[ch * n..][..n];
                let x = &zb[ch * n..][..n];
                for (gv, xv) in g.iter().zip(x) {
                    sum_dy += gv;
                    sum_dy_xhat += gv * (xv - mean[ch]) * inv_std;
                }
            }
            (sum_dy, sum_dy_xhat)
        })
        .collect();

    let dbeta: Vec<f64> = sums.iter().map(|s| s.0).collect();
    let dgamma: Vec<f64> = sums.iter().map(|s| s.1).collect();

    dy.par_iter_mut().zip(z.par_iter()).for_each(|(dyb, zb)| {
        for ch in 0..channels {
            let inv_std = 1.0 / (var[ch] + BN_EPS).sqrt();
            let g_mean = dbeta[ch] / m;
            let gx_mean = dgamma[ch] / m;
            let factor = gamma[ch] * inv_std;
            let grad_row = &mut dyb[ch * n..][..n];
            let z_row = &zb[ch * n..][..n];
            for (gv, &zv) in grad_row.iter_mut().zip(z_row) {
                let xhat = (zv - mean[ch]) * inv_std;
                *gv = factor * (*gv - g_mean - xhat * gx_mean);
            }
        }
    });

    (dgamma, dbeta)
}

/// Adam with bias correction; one moment pair per tensor.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(sizes: &[usize]) -> Self {
        Adam {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, cfg: &TrainConfig, tensors: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.t += 1;
        let bias1 = 1.0 - cfg.beta1.powi(self.t);
        let bias2 = 1.0 - cfg.beta2.powi(self.t);
        for ((tensor, grad), (m, v)) in tensors
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..tensor.len() {
                let g = grad[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                tensor[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            }
        }
    }
}

fn adam_tensor_sizes(params: &ModelParams) -> Vec<usize> {
    let mut sizes = vec![
        params.conv1_w.len(),
        params.conv2_w.len(),
        params.conv2_b.len(),
        params.fc1_w.len(),
        params.fc1_b.len(),
        params.fc2_w.len(),
        params.fc2_b.len(),
    ];
    if let Some(bn) = &params.bn {
        sizes.extend([
            bn.bn1_gamma.len(),
            bn.bn1_beta.len(),
            bn.bn2_gamma.len(),
            bn.bn2_beta.len(),
        ]);
    }
    sizes
}

fn apply_adam(params: &mut ModelParams, grads: &ParamGrads, adam: &mut Adam, cfg: &TrainConfig) {
    let ModelParams {
        conv1_w,
        conv2_w,
        conv2_b,
        fc1_w,
        fc1_b,
        fc2_w,
        fc2_b,
        bn,
        ..
    } = params;
    let mut tensors: Vec<&mut [f64]> = vec![
        conv1_w, conv2_w, conv2_b, fc1_w, fc1_b, fc2_w, fc2_b,
    ];
    let mut grad_refs: Vec<&[f64]> = vec![
        &grads.conv1_w,
        &grads.conv2_w,
        &grads.conv2_b,
        &grads.fc1_w,
        &grads.fc1_b,
        &grads.fc2_w,
        &grads.fc2_b,
    ];
    if let Some(bn) = bn {
        tensors.push(&mut bn.bn1_gamma);
        tensors.push(&mut bn.bn1_beta);
        tensors.push(&mut bn.bn2_gamma);
        tensors.push(&mut bn.bn2_beta);
        grad_refs.extend([
            &grads.bn1_gamma[..],
            &grads.bn1_beta[..],
            &grads.bn2_gamma[..],
            &grads.bn2_beta[..],
        ]);
    }
    adam.step(cfg, &mut tensors, &grad_refs);
}

/// Running-statistics update with unbiased variance. The momentum starts as
/// a cumulative average and settles to 0.1, so the inference statistics are
/// usable after the very first batches even when epochs hold few of them.
fn update_running_stats(
    bn: &mut BatchNormParams,
    stats: &BnBatchStats,
    m1: f64,
    m2: f64,
    update_count: usize,
) {
    let momentum = (1.0 / update_count as f64).max(0.1);
    let unbias1 = if m1 > 1.0 { m1 / (m1 - 1.0) } else { 1.0 };
    let unbias2 = if m2 > 1.0 { m2 / (m2 - 1.0) } else { 1.0 };
    for (r, &b) in bn.bn1_mean.iter_mut().zip(&stats.mean1) {
        *r = (1.0 - momentum) * *r + momentum * b;
    }
    for (r, &b) in bn.bn1_var.iter_mut().zip(&stats.var1) {
        *r = (1.0 - momentum) * *r + momentum * b * unbias1;
    }
    for (r, &b) in bn.bn2_mean.iter_mut().zip(&stats.mean2) {
        *r = (1.0 - momentum) * *r + momentum * b;
    }
    for (r, &b) in bn.bn2_var.iter_mut().zip(&stats.var2) {
        *r = (1.0 - momentum) * *r + momentum * b * unbias2;
    }
}

/// Inference-mode mean loss and top-1 accuracy over a set of examples.
pub fn evaluate(params: &ModelParams, examples: &[Example]) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty example set"));
    }
    let results: Vec<(f64, bool)> = examples
        .par_iter()
        .map(|ex| {
            let acts = layers::forward_example(params, &ex.tensor);
            let loss = layers::cross_entropy(&acts.logits, ex.label);
            (loss, super::argmax(&acts.logits) == ex.label)
        })
        .collect();
    let loss = results.iter().map(|r| r.0).sum::<f64>() / results.len() as f64;
    let acc = results.iter().filter(|r| r.1).count() as f64 / results.len() as f64;
    Ok((loss, acc))
}

/// Train a model with Adam and early stopping; returns the parameters of
/// the best validation epoch plus the per-epoch history.
pub fn train(
    train_set: &[Example],
    val_set: &[Example],
    config: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochStats>)> {
    config.validate()?;
    tcfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::invalid("training split needs at least two examples"));
    }
    if val_set.is_empty() {
        return Err(Error::invalid("validation split is empty"));
    }
    for ex in train_set.iter().chain(val_set) {
        if ex.tensor.len() != config.input_size {
            return Err(Error::shape(format!(
                "example length {} does not match input size {}",
                ex.tensor.len(),
                config.input_size
            )));
        }
        if ex.label >= config.num_classes {
            return Err(Error::invalid(format!(
                "label {} out of range for {} classes",
                ex.label, config.num_classes
            )));
        }
    }

    let mut params = ModelParams::init(config, crate::rng::derive_seed(tcfg.seed, &[TAG_INIT]))?;
    let mut adam = Adam::new(&adam_tensor_sizes(&params));

    let mut best_params = params.clone();
    let mut best_val_loss = f64::INFINITY;
    let mut bad_epochs = 0usize;
    let mut bn_updates = 0usize;
    let mut history = Vec::new();

    for epoch in 0..tcfg.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        Rng::from_tags(tcfg.seed, &[TAG_SHUFFLE, epoch as u64]).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (batch_idx, ids) in order.chunks(tcfg.batch_size).enumerate() {
            // A trailing sliver cannot support batch statistics; skip it.
            if ids.len() < 2 {
                continue;
            }
            let xs: Vec<Vec<f64>> = ids
                .iter()
                .map(|&i| layers::flatten_input(&train_set[i].tensor))
                .collect();
            let labels: Vec<usize> = ids.iter().map(|&i| train_set[i].label).collect();
            let out = batch_forward_backward(
                &params,
                &xs,
                &labels,
                MaskSeed {
                    seed: tcfg.seed,
                    epoch: epoch as u64,
                    batch: batch_idx as u64,
                },
            );
            apply_adam(&mut params, &out.grads, &mut adam, tcfg);
            if let (Some(bn), Some(stats)) = (params.bn.as_mut(), out.bn_stats.as_ref()) {
                bn_updates += 1;
                let m1 = (ids.len() * config.input_size) as f64;
                update_running_stats(bn, stats, m1, ids.len() as f64, bn_updates);
            }
            loss_sum += out.loss * ids.len() as f64;
            seen += ids.len();
        }

        let (val_loss, val_accuracy) = evaluate(&params, val_set)?;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            val_loss,
            val_accuracy,
        });

        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_params = params.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= tcfg.early_stop_patience {
                break;
            }
        }
    }

    best_params.quantize_to_f32();
    Ok((best_params, history))
}
