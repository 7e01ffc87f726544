//! Training objectives and their analytic gradients.
//!
//! Expectations over the batch are batch means; norms are taken over each
//! sample's flattened tensor. Every `*_grad` function returns the loss value
//! together with the gradient(s) the trainer backpropagates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureStack, LatentCode};
use crate::tensor::Tensor;

pub const DEFAULT_LOG_EPSILON: f64 = 1e-7;

/// Which terms make up the autoencoder objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub use_pixel: bool,
    pub use_perceptual: bool,
    pub use_latent: bool,
    /// Adds `-mean(log D(x_hat))` so the autoencoder also tries to fool the
    /// discriminator.
    pub use_adversarial_generator_term: bool,
    pub epsilon_log: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            use_pixel: true,
            use_perceptual: true,
            use_latent: false,
            use_adversarial_generator_term: false,
            epsilon_log: DEFAULT_LOG_EPSILON,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.use_pixel || self.use_perceptual || self.use_latent || self.use_adversarial_generator_term) {
            return Err(Error::Config("at least one generator loss term must be enabled".into()));
        }
        if !(self.epsilon_log > 0.0 && self.epsilon_log < 0.5) {
            return Err(Error::Config(format!(
                "epsilon_log must lie in (0, 0.5), got {}",
                self.epsilon_log
            )));
        }
        Ok(())
    }
}

fn same_shape(context: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(context, a.shape(), b.shape()));
    }
    Ok(())
}

/// Mean absolute error over every element.
pub fn pixel_loss(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    same_shape("pixel loss", x, x_hat)?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    Ok(sum / x.len() as f64)
}

/// Pixel loss and its gradient w.r.t. `x_hat` (subgradient 0 at ties).
pub fn pixel_loss_grad(x: &Tensor, x_hat: &Tensor) -> Result<(f64, Tensor)> {
    let loss = pixel_loss(x, x_hat)?;
    let scale = 1.0 / x.len() as f32;
    let grad = x_hat.zip_map(x, |h, v| {
        let d = h - v;
        if d > 0.0 {
            scale
        } else if d < 0.0 {
            -scale
        } else {
            0.0
        }
    })?;
    Ok((loss, grad))
}

/// `mean_n ||a_n - b_n||_2` and its gradient w.r.t. `a` (the gradient w.r.t.
/// `b` is the negation).
pub fn batch_mean_l2_grad(a: &Tensor, b: &Tensor) -> Result<(f64, Tensor)> {
    same_shape("batch-mean euclidean distance", a, b)?;
    let n = a.batch();
    let len = a.shape().sample_len();
    let mut grad = Tensor::zeros(a.shape());
    let mut total = 0.0;
    for i in 0..n {
        let (sa, sb) = (a.sample(i), b.sample(i));
        let norm = sa
            .iter()
            .zip(sb)
            .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        total += norm;
        if norm > 0.0 {
            let g = &mut grad.data_mut()[i * len..(i + 1) * len];
            for ((dst, &p), &q) in g.iter_mut().zip(sa).zip(sb) {
                *dst = ((p as f64 - q as f64) / (norm * n as f64)) as f32;
            }
        }
    }
    Ok((total / n as f64, grad))
}

pub fn batch_mean_l2(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(batch_mean_l2_grad(a, b)?.0)
}

/// Sum over stages of the batch-mean Euclidean distance between features.
pub fn perceptual_loss(fx: &FeatureStack, fx_hat: &FeatureStack) -> Result<f64> {
    Ok(perceptual_loss_grad(fx, fx_hat)?.0)
}

/// Perceptual loss with gradients w.r.t. `fx` (first) and `fx_hat` (second).
pub fn perceptual_loss_grad(fx: &FeatureStack, fx_hat: &FeatureStack) -> Result<(f64, Vec<Tensor>, Vec<Tensor>)> {
    if fx.stages().len() != fx_hat.stages().len() {
        return Err(Error::shape(
            "perceptual loss stack length",
            fx.stages().len(),
            fx_hat.stages().len(),
        ));
    }
    let mut total = 0.0;
    let mut ga = Vec::new();
    let mut gb = Vec::new();
    for (a, b) in fx.stages().iter().zip(fx_hat.stages()) {
        let (l, g) = batch_mean_l2_grad(a, b)?;
        total += l;
        gb.push(g.map(|v| -v));
        ga.push(g);
    }
    Ok((total, ga, gb))
}

/// Batch-mean Euclidean distance between bottleneck codes.
pub fn latent_loss(z: &LatentCode, z_hat: &LatentCode) -> Result<f64> {
    batch_mean_l2(z.tensor(), z_hat.tensor())
}

fn clamp_prob(p: f32, eps: f64) -> f64 {
    (p as f64).clamp(eps, 1.0 - eps)
}

/// Minimized discriminator cross-entropy
/// `-mean(log d_real) - mean(log(1 - d_fake))`, probabilities clamped to
/// `[eps, 1 - eps]`.
pub fn discriminator_loss(d_real: &[f32], d_fake: &[f32], eps: f64) -> f64 {
    discriminator_loss_grad(d_real, d_fake, eps).0
}

/// Discriminator loss with gradients w.r.t. `d_real` and `d_fake`; clamped
/// entries get zero gradient.
pub fn discriminator_loss_grad(d_real: &[f32], d_fake: &[f32], eps: f64) -> (f64, Vec<f32>, Vec<f32>) {
    let mut loss = 0.0;
    let mut g_real = vec![0.0; d_real.len()];
    let mut g_fake = vec![0.0; d_fake.len()];
    if !d_real.is_empty() {
        let n = d_real.len() as f64;
        for (g, &p) in g_real.iter_mut().zip(d_real) {
            let c = clamp_prob(p, eps);
            loss -= c.ln() / n;
            if c == p as f64 {
                *g = (-1.0 / (n * c)) as f32;
            }
        }
    }
    if !d_fake.is_empty() {
        let n = d_fake.len() as f64;
        for (g, &p) in g_fake.iter_mut().zip(d_fake) {
            let c = clamp_prob(p, eps);
            loss -= (1.0 - c).ln() / n;
            if c == p as f64 {
                *g = (1.0 / (n * (1.0 - c))) as f32;
            }
        }
    }
    (loss, g_real, g_fake)
}

/// `-mean(log d_fake)` with its gradient w.r.t. `d_fake`.
pub fn adversarial_generator_loss_grad(d_fake: &[f32], eps: f64) -> (f64, Vec<f32>) {
    let n = d_fake.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = d_fake
        .iter()
        .map(|&p| {
            let c = clamp_prob(p, eps);
            loss -= c.ln() / n;
            if c == p as f64 {
                (-1.0 / (n * c)) as f32
            } else {
                0.0
            }
        })
        .collect();
    (loss, grad)
}

/// Inputs to the autoencoder objective. Optional fields are only read when
/// the matching term is enabled.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorInputs<'a> {
    pub x: &'a Tensor,
    pub x_hat: &'a Tensor,
    pub features_x: &'a FeatureStack,
    pub features_x_hat: &'a FeatureStack,
    pub z: Option<&'a LatentCode>,
    pub z_hat: Option<&'a LatentCode>,
    pub d_fake: Option<&'a [f32]>,
}

/// Per-term values of the autoencoder objective; disabled terms are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLoss {
    pub pixel: f64,
    pub perceptual: f64,
    pub latent: f64,
    pub adversarial: f64,
    pub total: f64,
}

/// Gradients of the autoencoder objective w.r.t. each input it depends on.
#[derive(Debug, Clone)]
pub struct GeneratorGrads {
    pub x_hat: Tensor,
    pub features_x: Vec<Tensor>,
    pub features_x_hat: Vec<Tensor>,
    pub z: Option<Tensor>,
    pub z_hat: Option<Tensor>,
    pub d_fake: Option<Vec<f32>>,
}

pub fn generator_loss(inputs: &GeneratorInputs<'_>, cfg: &LossConfig) -> Result<GeneratorLoss> {
    Ok(generator_loss_grad(inputs, cfg)?.0)
}

pub fn generator_loss_grad(inputs: &GeneratorInputs<'_>, cfg: &LossConfig) -> Result<(GeneratorLoss, GeneratorGrads)> {
    cfg.validate()?;
    let mut out = GeneratorLoss::default();
    let mut grads = GeneratorGrads {
        x_hat: Tensor::zeros(inputs.x_hat.shape()),
        features_x: Vec::new(),
        features_x_hat: Vec::new(),
        z: None,
        z_hat: None,
        d_fake: None,
    };
    if cfg.use_pixel {
        let (l, g) = pixel_loss_grad(inputs.x, inputs.x_hat)?;
        out.pixel = l;
        grads.x_hat = g;
    }
    if cfg.use_perceptual {
        let (l, ga, gb) = perceptual_loss_grad(inputs.features_x, inputs.features_x_hat)?;
        out.perceptual = l;
        grads.features_x = ga;
        grads.features_x_hat = gb;
    }
    if cfg.use_latent {
        let (z, z_hat) = match (inputs.z, inputs.z_hat) {
            (Some(z), Some(h)) => (z, h),
            _ => return Err(Error::Config("latent loss enabled but codes not supplied".into())),
        };
        let (l, g) = batch_mean_l2_grad(z.tensor(), z_hat.tensor())?;
        out.latent = l;
        grads.z_hat = Some(g.map(|v| -v));
        grads.z = Some(g);
    }
    if cfg.use_adversarial_generator_term {
        let d_fake = inputs
            .d_fake
            .ok_or_else(|| Error::Config("adversarial term enabled but D(x_hat) not supplied".into()))?;
        let (l, g) = adversarial_generator_loss_grad(d_fake, cfg.epsilon_log);
        out.adversarial = l;
        grads.d_fake = Some(g);
    }
    out.total = out.pixel + out.perceptual + out.latent + out.adversarial;
    Ok((out, grads))
}
