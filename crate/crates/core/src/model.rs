//! Feed-forward multi-label classifier: an MLP encoder producing penultimate
//! features `h`, followed by a linear head `W` with sigmoid outputs.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{pooled_std, MultiLabelVector, Sample};
use crate::error::{check_dim, Error, Result};
use crate::nn::{Activation, Dense, DenseGrad, Stack};
use crate::rng;

/// Lower clamp on log arguments in [`bce_loss`].
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: Stack,
    pub head: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub penultimate: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Flattened last-layer gradient, row-major over (penultimate unit, class).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEmbedding {
    pub values: Vec<f64>,
    pub magnitude: f64,
}

impl GradientEmbedding {
    pub fn new(values: Vec<f64>) -> Self {
        let magnitude = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self { values, magnitude }
    }
}

/// Logistic function, kept strictly inside `(0, 1)`.
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

impl ModelParams {
    /// MLP `d -> hidden... -> C` with ReLU hidden units. `hidden_sizes` may be empty.
    pub fn init(d: usize, hidden_sizes: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        if d == 0 || num_classes == 0 || hidden_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "model dimensions must be positive (d = {d}, hidden = {hidden_sizes:?}, C = {num_classes})"
            )));
        }
        let mut r = rng::stream(seed, 0);
        let encoder = Stack::init(d, hidden_sizes, Activation::Relu, true, &mut r);
        let head = Dense::init(encoder.output_dim(), num_classes, &mut r);
        Ok(Self { encoder, head })
    }

    /// Pairs an encoder with a fresh head seeded by `seed`.
    pub fn with_encoder(encoder: Stack, num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        let mut r = rng::stream(seed, 1);
        let head = Dense::init(encoder.output_dim(), num_classes, &mut r);
        Ok(Self { encoder, head })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim
    }

    pub fn penultimate_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.outputs
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.head.is_finite()
    }

    pub fn penultimate(&self, features: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), features.len())?;
        Ok(self.encoder.forward(features))
    }

    pub fn forward(&self, features: &[f64]) -> Result<ForwardResult> {
        let penultimate = self.penultimate(features)?;
        Ok(self.head_forward(penultimate))
    }

    fn head_forward(&self, penultimate: Vec<f64>) -> ForwardResult {
        let logits = self.head.forward(&penultimate);
        let probs = logits.iter().map(|&z| sigmoid(z)).collect();
        ForwardResult {
            penultimate,
            logits,
            probs,
        }
    }
}

/// Mean binary cross-entropy over classes, with log arguments clamped to `[LOG_EPS, 1 - LOG_EPS]`.
pub fn bce_loss(probs: &[f64], labels: &MultiLabelVector) -> Result<f64> {
    check_dim(probs.len(), labels.len())?;
    let c = probs.len() as f64;
    let sum: f64 = probs
        .iter()
        .zip(labels.bits())
        .map(|(&p, &y)| {
            let p = p.clamp(LOG_EPS, 1.0 - LOG_EPS);
            if y {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum();
    Ok(-sum / c)
}

/// `dL/dW` for the sigmoid + BCE head: `W[i][j]` receives `(p_j - y_j) * h_i / C`.
/// Bias gradients are not included.
pub fn last_layer_gradient(
    params: &ModelParams,
    features: &[f64],
    labels: &MultiLabelVector,
) -> Result<GradientEmbedding> {
    check_dim(params.num_classes(), labels.len())?;
    let fwd = params.forward(features)?;
    Ok(head_gradient(&fwd, labels))
}

pub(crate) fn head_gradient(fwd: &ForwardResult, labels: &MultiLabelVector) -> GradientEmbedding {
    let c = fwd.probs.len() as f64;
    let residual: Vec<f64> = fwd
        .probs
        .iter()
        .zip(labels.bits())
        .map(|(&p, &y)| (p - if y { 1.0 } else { 0.0 }) / c)
        .collect();
    let mut values = Vec::with_capacity(fwd.penultimate.len() * residual.len());
    for &h in &fwd.penultimate {
        values.extend(residual.iter().map(|r| r * h));
    }
    GradientEmbedding::new(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate from epoch `lr_decay_epoch` (0-based) onward.
    pub lr_decay_factor: f64,
    pub lr_decay_epoch: usize,
    pub seed: u64,
    /// Gaussian feature noise per batch, in units of the training set's pooled feature std.
    pub augment_noise_std: f64,
    /// Train only the head, keeping the encoder fixed.
    #[serde(default)]
    pub freeze_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 10,
            learning_rate: 0.025,
            lr_decay_factor: 0.1,
            lr_decay_epoch: 80,
            seed: 0,
            augment_noise_std: 0.05,
            freeze_encoder: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor must be in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        if self.lr_decay_epoch < 1 || self.lr_decay_epoch > self.epochs {
            return Err(Error::Config(format!(
                "lr_decay_epoch must be in [1, {}], got {}",
                self.epochs, self.lr_decay_epoch
            )));
        }
        if self.augment_noise_std.is_nan() || self.augment_noise_std < 0.0 {
            return Err(Error::Config(
                "augment_noise_std must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch {
            self.learning_rate * self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean BCE over the samples seen in each epoch, measured before each batch's update.
    pub epoch_losses: Vec<f64>,
}

pub fn train(
    params: &ModelParams,
    labeled: &[&Sample],
    config: &TrainConfig,
) -> Result<ModelParams> {
    train_with_history(params, labeled, config).map(|o| o.params)
}

/// Mini-batch SGD on mean BCE with step learning-rate decay.
pub fn train_with_history(
    params: &ModelParams,
    labeled: &[&Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::Config("cannot train on an empty labeled set".into()));
    }
    for s in labeled {
        check_dim(params.input_dim(), s.features.len())?;
        check_dim(params.num_classes(), s.labels.len())?;
    }

    let noise_std =
        config.augment_noise_std * pooled_std(labeled.iter().map(|s| s.features.as_slice()));
    let noise =
        (noise_std > 0.0).then(|| Normal::new(0.0, noise_std).expect("finite nonnegative std"));

    let mut shuffle_rng = rng::stream(config.seed, 0);
    let mut noise_rng = rng::stream(config.seed, 1);
    let mut model = params.clone();
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        rng::shuffle(&mut shuffle_rng, &mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut enc_grad = model.encoder.zero_grad();
            let mut head_grad = DenseGrad::zeros_like(&model.head);
            for &idx in batch {
                let sample = labeled[idx];
                let mut x = sample.features.clone();
                if let Some(noise) = &noise {
                    x.iter_mut()
                        .for_each(|v| *v += noise.sample(&mut noise_rng));
                }
                let trace = model.encoder.forward_trace(&x);
                let fwd = model.head_forward(trace.output.clone());
                loss_sum += bce_loss(&fwd.probs, &sample.labels)?;
                let c = fwd.probs.len() as f64;
                let d_logits: Vec<f64> = fwd
                    .probs
                    .iter()
                    .zip(sample.labels.bits())
                    .map(|(&p, &y)| (p - if y { 1.0 } else { 0.0 }) / c)
                    .collect();
                let d_h = model
                    .head
                    .backward(&fwd.penultimate, &d_logits, &mut head_grad);
                if !config.freeze_encoder {
                    model.encoder.backward(&trace, &d_h, &mut enc_grad);
                }
            }
            let step = lr / batch.len() as f64;
            crate::nn::sgd(&mut model.head.weights, &head_grad.weights, step);
            crate::nn::sgd(&mut model.head.bias, &head_grad.bias, step);
            if !config.freeze_encoder {
                model.encoder.sgd_step(&enc_grad, step);
            }
        }
        let mean_loss = loss_sum / labeled.len() as f64;
        if !mean_loss.is_finite() || !model.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        epoch_losses.push(mean_loss);
    }
    Ok(TrainOutcome {
        params: model,
        epoch_losses,
    })
}

pub const CHECKPOINT_FORMAT: &str = "mgeal-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointRole {
    Classifier,
    PretrainedEncoder,
}

/// Versioned JSON parameter container. Layers are listed input to output with
/// row-major weights; a classifier's last layer is its head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub role: CheckpointRole,
    pub activation: Activation,
    pub input_dim: usize,
    pub layers: Vec<Dense>,
}

impl Checkpoint {
    pub fn from_classifier(params: &ModelParams) -> Self {
        let mut layers = params.encoder.layers.clone();
        layers.push(params.head.clone());
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            role: CheckpointRole::Classifier,
            activation: params.encoder.activation,
            input_dim: params.input_dim(),
            layers,
        }
    }

    pub fn from_encoder(encoder: &Stack) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            role: CheckpointRole::PretrainedEncoder,
            activation: encoder.activation,
            input_dim: encoder.input_dim,
            layers: encoder.layers.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format `{}`",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let mut fan_in = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.inputs != fan_in
                || l.weights.len() != l.inputs * l.outputs
                || l.bias.len() != l.outputs
            {
                return Err(Error::Checkpoint(format!(
                    "layer {i} has inconsistent shape"
                )));
            }
            fan_in = l.outputs;
        }
        Ok(())
    }

    pub fn into_classifier(self) -> Result<ModelParams> {
        self.validate()?;
        if self.role != CheckpointRole::Classifier {
            return Err(Error::Checkpoint("expected a classifier checkpoint".into()));
        }
        let mut layers = self.layers;
        let head = layers
            .pop()
            .ok_or_else(|| Error::Checkpoint("classifier checkpoint has no layers".into()))?;
        Ok(ModelParams {
            encoder: Stack {
                input_dim: self.input_dim,
                layers,
                activation: self.activation,
                activate_output: true,
            },
            head,
        })
    }

    pub fn into_encoder(self) -> Result<Stack> {
        self.validate()?;
        if self.role != CheckpointRole::PretrainedEncoder {
            return Err(Error::Checkpoint(
                "expected a pretrained-encoder checkpoint".into(),
            ));
        }
        Ok(Stack {
            input_dim: self.input_dim,
            layers: self.layers,
            activation: self.activation,
            activate_output: true,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
