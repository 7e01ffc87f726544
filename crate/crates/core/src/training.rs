//! Alternating optimization of the discriminator and the autoencoder, plus
//! the training-set error map.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{discriminator_loss_grad, generator_loss_grad, GeneratorInputs, LossConfig};
use crate::model::{
    build_networks_split, image_shape, reconstruct, ArchConfig, FeatureStack, ForwardPass, ImageBatch,
    LatentCode, Mode, Network, Networks,
};
use crate::optim::{AdamW, AdamWConfig};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub weight_decay: f32,
    /// Discriminator steps per mini-batch.
    pub k_d: usize,
    /// Autoencoder steps per mini-batch.
    pub k_ae: usize,
    pub seed: u64,
    /// Overrides `seed` for the discriminator's initialization and dropout.
    pub discriminator_seed: Option<u64>,
    pub loss: LossConfig,
    pub arch: ArchConfig,
    /// Dataset directory holding `manifest.csv`.
    pub dataset: PathBuf,
    /// Checkpoint file written after training.
    pub checkpoint: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 24,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            weight_decay: 1e-2,
            k_d: 1,
            k_ae: 1,
            seed: 0,
            discriminator_seed: None,
            loss: LossConfig::default(),
            arch: ArchConfig::default(),
            dataset: PathBuf::from("data"),
            checkpoint: PathBuf::from("run/model.ckpt"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("k_d", self.k_d),
            ("k_ae", self.k_ae),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("train.{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("train.{name} must lie in [0, 1)")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("train.weight_decay must be nonnegative".into()));
        }
        self.loss.validate()?;
        self.arch.validate()
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn discriminator_seed(&self) -> u64 {
        self.discriminator_seed.unwrap_or(self.seed)
    }
}

/// Mean absolute training residual per pixel, `(3, 128, 128)`, nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap(Tensor);

impl ErrorMap {
    pub fn new(t: Tensor) -> Result<Self> {
        t.expect_shape("error map", image_shape(1))?;
        if t.data().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Config("error map values must be nonnegative".into()));
        }
        Ok(ErrorMap(t))
    }

    pub fn zeros() -> Self {
        ErrorMap(Tensor::zeros(image_shape(1)))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_eg: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
    pub seconds: f64,
    #[serde(skip)]
    pub d_steps: usize,
    #[serde(skip)]
    pub ae_steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub const HEADER: [&'static str; 6] = ["epoch", "loss_d", "loss_eg", "d_real_mean", "d_fake_mean", "seconds"];

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(Self::HEADER)?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.loss_d.to_string(),
                r.loss_eg.to_string(),
                r.d_real_mean.to_string(),
                r.d_fake_mean.to_string(),
                format!("{:.3}", r.seconds),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Trained networks with everything needed to score new images.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub networks: Networks,
    pub error_map: Option<ErrorMap>,
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(10);
    rng
}

fn dropout_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(11);
    rng
}

fn probs_to_tensor(p: Vec<f32>) -> Tensor {
    let n = p.len();
    Tensor::from_vec(Shape::new(n, 1, 1, 1), p).expect("one probability per sample")
}

struct AePass {
    enc: ForwardPass,
    dec: ForwardPass,
}

struct Trainer {
    cfg: TrainConfig,
    nets: Networks,
    opt_e: AdamW,
    opt_g: AdamW,
    opt_d: AdamW,
    grads_e: crate::model::Gradients,
    grads_g: crate::model::Gradients,
    grads_d: crate::model::Gradients,
    dropout: ChaCha8Rng,
    // the autoencoder has no stochastic layers; this stream is never drawn from
    ae_rng: ChaCha8Rng,
}

#[derive(Default)]
struct StepStats {
    loss_d: f64,
    loss_eg: f64,
    d_real: f64,
    d_fake: f64,
}

impl Trainer {
    fn new(cfg: &TrainConfig) -> Self {
        let nets = build_networks_split(cfg.seed, cfg.discriminator_seed(), &cfg.arch);
        let opt = cfg.optimizer();
        Trainer {
            opt_e: AdamW::new(opt, &nets.encoder),
            opt_g: AdamW::new(opt, &nets.decoder),
            opt_d: AdamW::new(opt, &nets.discriminator),
            grads_e: nets.encoder.zero_gradients(),
            grads_g: nets.decoder.zero_gradients(),
            grads_d: nets.discriminator.zero_gradients(),
            dropout: dropout_rng(cfg.discriminator_seed()),
            ae_rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg: cfg.clone(),
            nets,
        }
    }

    fn autoencode(&mut self, x: &Tensor) -> Result<AePass> {
        let enc = self.nets.encoder.forward(x, Mode::Train, &mut self.ae_rng)?;
        let dec = self.nets.decoder.forward(&enc.output, Mode::Train, &mut self.ae_rng)?;
        Ok(AePass { enc, dec })
    }

    /// One discriminator update on `x` against the detached reconstruction.
    fn discriminator_step(&mut self, x: &Tensor, ae: &AePass, stats: &mut StepStats) -> Result<()> {
        let disc = &mut self.nets.discriminator;
        let real = disc.forward(x, Mode::Train, &mut self.dropout)?;
        let fake = disc.forward(&ae.dec.output, Mode::Train, &mut self.dropout)?;
        let (loss, g_real, g_fake) =
            discriminator_loss_grad(real.output.data(), fake.output.data(), self.cfg.loss.epsilon_log);
        self.grads_d.zero();
        disc.backward(&real, Some(&probs_to_tensor(g_real)), &[], &mut self.grads_d)?;
        disc.backward(&fake, Some(&probs_to_tensor(g_fake)), &[], &mut self.grads_d)?;
        self.opt_d.step(disc, &self.grads_d);
        stats.loss_d = loss;
        stats.d_real = mean(real.output.data());
        stats.d_fake = mean(fake.output.data());
        Ok(())
    }

    /// One encoder/decoder update; `ω` is read but never written.
    fn autoencoder_step(&mut self, x: &Tensor, ae: AePass, stats: &mut StepStats) -> Result<()> {
        self.autoencoder_gradients(x, ae, stats)?;
        self.opt_e.step(&mut self.nets.encoder, &self.grads_e);
        self.opt_g.step(&mut self.nets.decoder, &self.grads_g);
        Ok(())
    }

    /// Fills `grads_e` and `grads_g` with the gradient of the autoencoder
    /// objective at the current parameters.
    fn autoencoder_gradients(&mut self, x: &Tensor, ae: AePass, stats: &mut StepStats) -> Result<()> {
        let x_hat = &ae.dec.output;
        let enc_hat = self.nets.encoder.forward(x_hat, Mode::Train, &mut self.ae_rng)?;
        let feats = FeatureStack::new(ae.enc.activations[..4].to_vec())?;
        let feats_hat = FeatureStack::new(enc_hat.activations[..4].to_vec())?;
        let z = LatentCode::new(ae.enc.output.clone())?;
        let z_hat = LatentCode::new(enc_hat.output.clone())?;

        let disc_pass = if self.cfg.loss.use_adversarial_generator_term {
            Some(self.nets.discriminator.infer(x_hat, Mode::Eval)?)
        } else {
            None
        };
        let inputs = GeneratorInputs {
            x,
            x_hat,
            features_x: &feats,
            features_x_hat: &feats_hat,
            z: Some(&z),
            z_hat: Some(&z_hat),
            d_fake: disc_pass.as_ref().map(|p| p.output.data()),
        };
        let (loss, grads) = generator_loss_grad(&inputs, &self.cfg.loss)?;
        stats.loss_eg = loss.total;

        self.grads_e.zero();
        self.grads_g.zero();
        let mut g_x_hat = grads.x_hat;
        if let (Some(pass), Some(g_fake)) = (&disc_pass, grads.d_fake) {
            // gradient into x_hat only; the discriminator's own gradients are discarded
            let mut scratch = self.nets.discriminator.zero_gradients();
            let g = self
                .nets
                .discriminator
                .backward(pass, Some(&probs_to_tensor(g_fake)), &[], &mut scratch)?;
            g_x_hat.add_assign(&g)?;
        }
        let feat_hat_grads: Vec<Option<Tensor>> = grads.features_x_hat.into_iter().map(Some).collect();
        if !feat_hat_grads.is_empty() || grads.z_hat.is_some() {
            let g = self.nets.encoder.backward(
                &enc_hat,
                grads.z_hat.as_ref(),
                &feat_hat_grads,
                &mut self.grads_e,
            )?;
            g_x_hat.add_assign(&g)?;
        }
        let mut g_z = self
            .nets
            .decoder
            .backward(&ae.dec, Some(&g_x_hat), &[], &mut self.grads_g)?;
        if let Some(gz) = &grads.z {
            g_z.add_assign(gz)?;
        }
        let feat_grads: Vec<Option<Tensor>> = grads.features_x.into_iter().map(Some).collect();
        self.nets
            .encoder
            .backward(&ae.enc, Some(&g_z), &feat_grads, &mut self.grads_e)?;
        Ok(())
    }
}

fn mean(v: &[f32]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64
}

/// Trains on normal images only. `on_epoch` sees each log row as it is
/// produced.
pub fn train(
    cfg: &TrainConfig,
    normal_images: &ImageBatch,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    if normal_images.is_empty() {
        return Err(Error::EmptyDataset("no training images".into()));
    }
    let data = normal_images.tensor();
    let n = data.batch();
    let mut trainer = Trainer::new(cfg);
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffler = shuffle_rng(cfg.seed);
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffler);
        let mut sums = StepStats::default();
        let (mut d_steps, mut ae_steps, mut weight) = (0usize, 0usize, 0.0f64);
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.gather(idx);
            let mut stats = StepStats::default();
            let mut cached = None;
            for k in 0..cfg.k_d {
                let ae = trainer.autoencode(&x)?;
                trainer.discriminator_step(&x, &ae, &mut stats)?;
                d_steps += 1;
                if !stats.loss_d.is_finite() {
                    return Err(Error::NonFiniteLoss { loss: "discriminator", epoch, step });
                }
                if k + 1 == cfg.k_d {
                    cached = Some(ae);
                }
            }
            for _ in 0..cfg.k_ae {
                let ae = match cached.take() {
                    Some(ae) => ae,
                    None => trainer.autoencode(&x)?,
                };
                trainer.autoencoder_step(&x, ae, &mut stats)?;
                ae_steps += 1;
                if !stats.loss_eg.is_finite() {
                    return Err(Error::NonFiniteLoss { loss: "generator", epoch, step });
                }
            }
            let w = idx.len() as f64;
            weight += w;
            sums.loss_d += w * stats.loss_d;
            sums.loss_eg += w * stats.loss_eg;
            sums.d_real += w * stats.d_real;
            sums.d_fake += w * stats.d_fake;
        }
        let record = EpochRecord {
            epoch,
            loss_d: sums.loss_d / weight,
            loss_eg: sums.loss_eg / weight,
            d_real_mean: sums.d_real / weight,
            d_fake_mean: sums.d_fake / weight,
            seconds: started.elapsed().as_secs_f64(),
            d_steps,
            ae_steps,
        };
        on_epoch(&record);
        log.epochs.push(record);
    }

    Ok((
        Checkpoint {
            config: cfg.clone(),
            networks: trainer.nets,
            error_map: None,
        },
        log,
    ))
}

pub const EVAL_BATCH: usize = 16;

/// `C = mean_i |x_i - x_hat_i|` over the dataset, reconstructions in eval mode.
pub fn compute_error_map(encoder: &Network, decoder: &Network, normal_images: &ImageBatch) -> Result<ErrorMap> {
    let data = normal_images.tensor();
    let n = data.batch();
    if n == 0 {
        return Err(Error::EmptyDataset("no images for the error map".into()));
    }
    let plane = image_shape(1).numel();
    let mut acc = vec![0.0f64; plane];
    for start in (0..n).step_by(EVAL_BATCH) {
        let x = ImageBatch::new(data.slice_batch(start, (start + EVAL_BATCH).min(n)))?;
        let (x_hat, _, _) = reconstruct(encoder, decoder, &x, Mode::Eval)?;
        for i in 0..x.len() {
            for ((a, &p), &q) in acc.iter_mut().zip(x.tensor().sample(i)).zip(x_hat.tensor().sample(i)) {
                *a += (p as f64 - q as f64).abs();
            }
        }
    }
    let data = acc.into_iter().map(|v| (v / n as f64) as f32).collect();
    ErrorMap::new(Tensor::from_vec(image_shape(1), data)?)
}

/// Error map from explicit reconstruction pairs; the residual average alone.
pub fn error_map_from_pairs(x: &Tensor, x_hat: &Tensor) -> Result<ErrorMap> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape("error map pairs", x.shape(), x_hat.shape()));
    }
    let n = x.batch();
    if n == 0 {
        return Err(Error::EmptyDataset("no reconstruction pairs".into()));
    }
    x.expect_shape("error map inputs", image_shape(n))?;
    let mut acc = vec![0.0f64; image_shape(1).numel()];
    for i in 0..n {
        for ((a, &p), &q) in acc.iter_mut().zip(x.sample(i)).zip(x_hat.sample(i)) {
            *a += (p as f64 - q as f64).abs();
        }
    }
    ErrorMap::new(Tensor::from_vec(
        image_shape(1),
        acc.into_iter().map(|v| (v / n as f64) as f32).collect(),
    )?)
}
