//! Bootstrap-your-own-latent pre-training for the classifier encoder.
//!
//! The online branch (encoder, projector, predictor) learns to predict the
//! target branch's projection of a second augmented view. The target branch
//! receives no gradients; it tracks the online weights as an exponential
//! moving average after every step.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Archive;
use crate::error::{check_dim, Error, Result};
use crate::model::ModelParams;
use crate::nn::{Activation, Stack, StackGrad, Trace};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub noise_std: f64,
    /// Probability of zeroing each coordinate, in `[0, 1)`.
    pub mask_prob: f64,
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "augmentation noise_std must be nonnegative, got {}",
                self.noise_std
            )));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!(
                "mask_prob must be in [0, 1), got {}",
                self.mask_prob
            )));
        }
        Ok(())
    }
}

/// Gaussian noise on every coordinate, then independent masking to zero.
///
/// Noise draws for all coordinates come first, followed by one mask draw per coordinate.
pub fn augment<R: Rng + ?Sized>(features: &[f64], spec: &AugmentSpec, rng: &mut R) -> Vec<f64> {
    let mut out = features.to_vec();
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).expect("validated std");
        out.iter_mut().for_each(|v| *v += noise.sample(rng));
    }
    if spec.mask_prob > 0.0 {
        for v in &mut out {
            if rng.random::<f64>() < spec.mask_prob {
                *v = 0.0;
            }
        }
    }
    out
}

fn unit(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Degenerate(format!("vector norm is {norm}")));
    }
    Ok((v.iter().map(|x| x / norm).collect(), norm))
}

/// `|| u/|u| - v/|v| ||^2`, which lies in `[0, 4]`.
pub fn byol_loss(online_pred: &[f64], target_proj: &[f64]) -> Result<f64> {
    check_dim(online_pred.len(), target_proj.len())?;
    let (u, _) = unit(online_pred)?;
    let (v, _) = unit(target_proj)?;
    Ok(u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum())
}

/// Loss and its gradient with respect to the online prediction.
fn byol_loss_grad(online_pred: &[f64], target_proj: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (u, norm_u) = unit(online_pred)?;
    let (v, _) = unit(target_proj)?;
    let cos: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    let loss = u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
    let grad = u
        .iter()
        .zip(&v)
        .map(|(a, b)| 2.0 * (a * cos - b) / norm_u)
        .collect();
    Ok((loss, grad))
}

/// `target <- tau * target + (1 - tau) * online`, parameter by parameter.
pub fn ema_update(target: &mut Stack, online: &Stack, tau: f64) -> Result<()> {
    target.check_same_shape(online)?;
    for (t, o) in target.params_mut().zip(online.params()) {
        *t = tau * *t + (1.0 - tau) * *o;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByolConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub tau: f64,
    /// Encoder widths; must match the classifier that will receive the encoder.
    pub hidden_sizes: Vec<usize>,
    pub augment: AugmentSpec,
    pub seed: u64,
}

impl Default for ByolConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            tau: 0.99,
            hidden_sizes: vec![32],
            augment: AugmentSpec {
                noise_std: 0.3,
                mask_prob: 0.1,
            },
            seed: 0,
        }
    }
}

impl ByolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "ssl epochs and batch_size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "ssl learning_rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!(
                "tau must be in [0, 1], got {}",
                self.tau
            )));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("ssl hidden sizes must be positive".into()));
        }
        self.augment.validate()
    }
}

/// Online and target branches.
#[derive(Debug, Clone, PartialEq)]
pub struct ByolState {
    pub online_encoder: Stack,
    pub online_projector: Stack,
    pub online_predictor: Stack,
    pub target_encoder: Stack,
    pub target_projector: Stack,
    pub tau: f64,
}

struct OnlineGrads {
    encoder: StackGrad,
    projector: StackGrad,
    predictor: StackGrad,
}

impl ByolState {
    /// Projector and predictor are `p -> 2p -> p`; the target starts as a copy of the online branch.
    pub fn init(input_dim: usize, hidden_sizes: &[usize], tau: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_sizes.contains(&0) {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        let mut r = rng::stream(seed, 0);
        let encoder = Stack::init(input_dim, hidden_sizes, Activation::Relu, true, &mut r);
        let p = encoder.output_dim();
        let projector = Stack::init(p, &[2 * p, p], Activation::Relu, false, &mut r);
        let predictor = Stack::init(p, &[2 * p, p], Activation::Relu, false, &mut r);
        Ok(Self {
            target_encoder: encoder.clone(),
            target_projector: projector.clone(),
            online_encoder: encoder,
            online_projector: projector,
            online_predictor: predictor,
            tau,
        })
    }

    pub fn ema_update(&mut self) -> Result<()> {
        ema_update(&mut self.target_encoder, &self.online_encoder, self.tau)?;
        ema_update(&mut self.target_projector, &self.online_projector, self.tau)
    }

    fn target_projection(&self, x: &[f64]) -> Vec<f64> {
        self.target_projector
            .forward(&self.target_encoder.forward(x))
    }

    /// One direction: online sees `a`, target sees `b`. Returns the loss and
    /// accumulates `weight * dL/dtheta` into the online gradients.
    fn accumulate(
        &self,
        a: &[f64],
        b: &[f64],
        weight: f64,
        grads: &mut OnlineGrads,
    ) -> Result<f64> {
        let t_enc: Trace = self.online_encoder.forward_trace(a);
        let t_proj = self.online_projector.forward_trace(&t_enc.output);
        let t_pred = self.online_predictor.forward_trace(&t_proj.output);
        let target = self.target_projection(b);
        let (loss, mut d_u) = byol_loss_grad(&t_pred.output, &target)?;
        d_u.iter_mut().for_each(|g| *g *= weight);
        let d_z = self
            .online_predictor
            .backward(&t_pred, &d_u, &mut grads.predictor);
        let d_h = self
            .online_projector
            .backward(&t_proj, &d_z, &mut grads.projector);
        self.online_encoder
            .backward(&t_enc, &d_h, &mut grads.encoder);
        Ok(loss)
    }

    /// Symmetrized loss over a batch, one SGD step on the online branch, then the EMA update.
    /// Returns the mean loss over the batch.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        batch: &[&[f64]],
        learning_rate: f64,
        augment_spec: &AugmentSpec,
        rng: &mut R,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut grads = OnlineGrads {
            encoder: self.online_encoder.zero_grad(),
            projector: self.online_projector.zero_grad(),
            predictor: self.online_predictor.zero_grad(),
        };
        let weight = 0.5 / batch.len() as f64;
        let mut total = 0.0;
        for x in batch {
            check_dim(self.online_encoder.input_dim, x.len())?;
            let v1 = augment(x, augment_spec, rng);
            let v2 = augment(x, augment_spec, rng);
            total += self.accumulate(&v1, &v2, weight, &mut grads)?;
            total += self.accumulate(&v2, &v1, weight, &mut grads)?;
        }
        self.online_encoder.sgd_step(&grads.encoder, learning_rate);
        self.online_projector
            .sgd_step(&grads.projector, learning_rate);
        self.online_predictor
            .sgd_step(&grads.predictor, learning_rate);
        self.ema_update()?;
        Ok(total * weight)
    }

    fn is_finite(&self) -> bool {
        [
            &self.online_encoder,
            &self.online_projector,
            &self.online_predictor,
            &self.target_encoder,
            &self.target_projector,
        ]
        .iter()
        .all(|s| s.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub encoder: Stack,
    pub epoch_losses: Vec<f64>,
    pub state: ByolState,
}

/// Runs BYOL over `archive` and returns the online encoder.
pub fn pretrain(archive: &Archive, config: &ByolConfig) -> Result<PretrainOutcome> {
    config.validate()?;
    if archive.is_empty() {
        return Err(Error::Config("cannot pretrain on an empty archive".into()));
    }
    let mut state = ByolState::init(archive.dim(), &config.hidden_sizes, config.tau, config.seed)?;
    let mut order: Vec<usize> = (0..archive.len()).collect();
    let mut shuffle_rng = rng::stream(config.seed, 1);
    let mut aug_rng = rng::stream(config.seed, 2);
    let samples = archive.samples();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        rng::shuffle(&mut shuffle_rng, &mut order);
        let mut weighted = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&[f64]> = chunk
                .iter()
                .map(|&i| samples[i].features.as_slice())
                .collect();
            let loss = state
                .train_step(&batch, config.learning_rate, &config.augment, &mut aug_rng)
                .map_err(|e| match e {
                    Error::Degenerate(_) => Error::TrainingDiverged { epoch },
                    other => other,
                })?;
            weighted += loss * chunk.len() as f64;
        }
        let mean = weighted / archive.len() as f64;
        if !mean.is_finite() || !state.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        epoch_losses.push(mean);
    }
    Ok(PretrainOutcome {
        encoder: state.online_encoder.clone(),
        epoch_losses,
        state,
    })
}

/// Classifier whose encoder is `encoder` and whose `p -> C` head is freshly seeded.
pub fn transfer(
    encoder: &Stack,
    input_dim: usize,
    num_classes: usize,
    seed: u64,
) -> Result<ModelParams> {
    check_dim(input_dim, encoder.input_dim)?;
    ModelParams::with_encoder(encoder.clone(), num_classes, seed)
}
