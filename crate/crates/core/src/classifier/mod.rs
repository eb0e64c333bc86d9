//! Raw-IQ convolutional classifier with exact reverse-mode gradients.
//!
//! Architecture: a `[1, 2, N]` input is filtered by a width-7 convolution
//! with kernel height 1 (I and Q filtered separately, no bias), then by a
//! kernel-height-2 convolution that consumes both rows together, then two
//! fully connected layers. Hidden layers use ReLU; the output layer is
//! linear. Temporal width is preserved at both conv layers by 3 zeros of
//! padding per side. Regularization is either dropout after each hidden
//! activation or batch normalization after the second convolution and the
//! first dense layer (before ReLU).
//!
//! All math runs in f64; parameters are binary32 at rest, so a save/load
//! round trip is bit-exact for any parameters this module produces.

mod io;
mod layers;
mod train;

pub use io::{load_params, save_params};
pub use train::{evaluate, train, EpochStats, TrainConfig};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::modem::ModScheme;
use crate::signal::IqTensor;

/// Regularization flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Dropout,
    BatchNorm,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    pub num_classes: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel_width: usize,
    pub fc1_units: usize,
    pub norm_mode: NormMode,
    /// Drop probability, used only in [`NormMode::Dropout`].
    pub dropout_rate: f64,
}

impl ModelConfig {
    /// The standard architecture: 256 and 80 conv channels, width-7 kernels,
    /// 256 dense units, batch normalization.
    pub fn standard(input_size: usize, num_classes: usize) -> Self {
        ModelConfig {
            input_size,
            num_classes,
            conv1_channels: 256,
            conv2_channels: 80,
            kernel_width: 7,
            fc1_units: 256,
            norm_mode: NormMode::BatchNorm,
            dropout_rate: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0
            || self.num_classes < 2
            || self.conv1_channels == 0
            || self.conv2_channels == 0
            || self.fc1_units == 0
        {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.kernel_width.is_multiple_of(2) {
            return Err(Error::invalid("kernel width must be odd"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Zero padding per side: (kernel_width - 1) / 2.
    pub fn pad(&self) -> usize {
        (self.kernel_width - 1) / 2
    }

    /// Flattened feature length entering fc1.
    pub fn flat_len(&self) -> usize {
        self.conv2_channels * self.input_size
    }
}

/// Batch-norm learned scale/shift and running statistics for the two
/// normalized layers.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub bn1_gamma: Vec<f64>,
    pub bn1_beta: Vec<f64>,
    pub bn1_mean: Vec<f64>,
    pub bn1_var: Vec<f64>,
    pub bn2_gamma: Vec<f64>,
    pub bn2_beta: Vec<f64>,
    pub bn2_mean: Vec<f64>,
    pub bn2_var: Vec<f64>,
}

impl BatchNormParams {
    fn identity(conv2_channels: usize, fc1_units: usize) -> Self {
        BatchNormParams {
            bn1_gamma: vec![1.0; conv2_channels],
            bn1_beta: vec![0.0; conv2_channels],
            bn1_mean: vec![0.0; conv2_channels],
            bn1_var: vec![1.0; conv2_channels],
            bn2_gamma: vec![1.0; fc1_units],
            bn2_beta: vec![0.0; fc1_units],
            bn2_mean: vec![0.0; fc1_units],
            bn2_var: vec![1.0; fc1_units],
        }
    }
}

/// All learned tensors plus the architecture they belong to.
///
/// Layouts are row-major: `conv1_w[c][t]`, `conv2_w[o][c][r][t]`,
/// `fc1_w[u][j]`, `fc2_w[k][u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub conv1_w: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
    pub bn: Option<BatchNormParams>,
}

impl ModelParams {
    /// Kaiming-uniform fan-in initialization for conv/dense weights, zero
    /// biases, identity batch-norm. Values are quantized to binary32.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::rng::Rng::from_tags(seed, &[0x696e6974]);
        let mut uniform = |count: usize, fan_in: usize| -> Vec<f64> {
            let bound = (6.0 / fan_in as f64).sqrt();
            (0..count)
                .map(|_| ((rng.next_f64() * 2.0 - 1.0) * bound) as f32 as f64)
                .collect()
        };
        let kw = config.kernel_width;
        let c1 = config.conv1_channels;
        let c2 = config.conv2_channels;
        let flat = config.flat_len();
        let params = ModelParams {
            conv1_w: uniform(c1 * kw, kw),
            conv2_w: uniform(c2 * c1 * 2 * kw, c1 * 2 * kw),
            conv2_b: vec![0.0; c2],
            fc1_w: uniform(config.fc1_units * flat, flat),
            fc1_b: vec![0.0; config.fc1_units],
            fc2_w: uniform(config.num_classes * config.fc1_units, config.fc1_units),
            fc2_b: vec![0.0; config.num_classes],
            bn: match config.norm_mode {
                NormMode::BatchNorm => Some(BatchNormParams::identity(c2, config.fc1_units)),
                NormMode::Dropout => None,
            },
            config: config.clone(),
        };
        Ok(params)
    }

    /// Round every tensor to binary32 precision.
    pub(crate) fn quantize_to_f32(&mut self) {
        fn q(v: &mut [f64]) {
            for x in v {
                *x = *x as f32 as f64;
            }
        }
        q(&mut self.conv1_w);
        q(&mut self.conv2_w);
        q(&mut self.conv2_b);
        q(&mut self.fc1_w);
        q(&mut self.fc1_b);
        q(&mut self.fc2_w);
        q(&mut self.fc2_b);
        if let Some(bn) = &mut self.bn {
            q(&mut bn.bn1_gamma);
            q(&mut bn.bn1_beta);
            q(&mut bn.bn1_mean);
            q(&mut bn.bn1_var);
            q(&mut bn.bn2_gamma);
            q(&mut bn.bn2_beta);
            q(&mut bn.bn2_mean);
            q(&mut bn.bn2_var);
        }
    }

    fn check_input(&self, batch: &[IqTensor]) -> Result<()> {
        for t in batch {
            if t.len() != self.config.input_size {
                return Err(Error::shape(format!(
                    "example length {} does not match model input size {}",
                    t.len(),
                    self.config.input_size
                )));
            }
        }
        Ok(())
    }
}

/// Generation metadata carried alongside each example.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleMeta {
    pub scheme: ModScheme,
    pub cfo: f64,
    pub span_symbols: u8,
    pub rolloff: f64,
}

/// One classifier input: a `[1, 2, N]` tensor with its true class and the
/// channel conditions it was generated under.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tensor: IqTensor,
    pub label: usize,
    pub es_n0_db: f64,
    pub meta: ExampleMeta,
}

/// Inference-mode forward pass: batch-norm uses running statistics and
/// dropout is disabled. Deterministic and independent per example.
pub fn forward(params: &ModelParams, batch: &[IqTensor]) -> Result<Vec<Vec<f64>>> {
    params.check_input(batch)?;
    Ok(batch
        .par_iter()
        .map(|x| layers::forward_example(params, x).logits)
        .collect())
}

/// Mean categorical cross-entropy with a numerically stable log-softmax.
pub fn loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::invalid("logits and labels must pair up, nonempty"));
    }
    let mut total = 0.0;
    for (row, &label) in logits.iter().zip(labels) {
        if label >= row.len() {
            return Err(Error::invalid(format!(
                "label {label} out of range for {} classes",
                row.len()
            )));
        }
        total += layers::cross_entropy(row, label);
    }
    Ok(total / logits.len() as f64)
}

/// Exact gradient of [`loss`] composed with [`forward`] with respect to the
/// input tensors. Batch norm runs in inference mode, matching the deployed
/// classifier an attack targets.
pub fn input_gradient(
    params: &ModelParams,
    batch: &[IqTensor],
    labels: &[usize],
) -> Result<Vec<IqTensor>> {
    params.check_input(batch)?;
    if batch.len() != labels.len() || batch.is_empty() {
        return Err(Error::invalid("batch and labels must pair up, nonempty"));
    }
    let k = params.config.num_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let scale = 1.0 / batch.len() as f64;
    batch
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, &label)| {
            let grad = layers::input_gradient_example(params, x, label, scale);
            let n = params.config.input_size;
            IqTensor::new(grad[..n].to_vec(), grad[n..].to_vec())
        })
        .collect()
}

/// Argmax of each logits row; ties resolve to the lowest class index.
pub fn predict_top1(params: &ModelParams, batch: &[IqTensor]) -> Result<Vec<usize>> {
    Ok(forward(params, batch)?.iter().map(|row| argmax(row)).collect())
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
