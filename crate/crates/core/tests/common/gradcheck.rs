//! Finite-difference trials for every loss term. Each returns the worst
//! relative error of one random trial.

use rand::Rng;
use railscan::losses::{
    discriminator_loss, discriminator_loss_grad, generator_loss, generator_loss_grad, perceptual_loss,
    perceptual_loss_grad, pixel_loss, pixel_loss_grad, GeneratorInputs, LossConfig,
};
use railscan::model::latent_shape;
use railscan::{FeatureStack, LatentCode, Shape, Tensor};

use super::{grad_rel_err, numeric_grad};

pub const H: f32 = 1e-3;
pub const TOL: f64 = 1e-3;

fn random_tensor<R: Rng>(rng: &mut R, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Keeps every `|a - b|` clear of the kink at zero by more than the step.
fn away_from_kinks<R: Rng>(rng: &mut R, a: &Tensor, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |i| loop {
        let v: f32 = rng.random_range(-1.0..1.0);
        if (v - a.data()[i]).abs() > 5.0 * H {
            break v;
        }
    })
}

pub fn pixel_trial<R: Rng>(rng: &mut R) -> f64 {
    let shape = Shape::new(2, 1, 4, 4);
    let x = random_tensor(rng, shape);
    let x_hat = away_from_kinks(rng, &x, shape);
    let (_, g) = pixel_loss_grad(&x, &x_hat).unwrap();
    let n = numeric_grad(&x_hat, H, |xh| pixel_loss(&x, xh).unwrap());
    grad_rel_err(g.data(), &n)
}

pub fn perceptual_trial<R: Rng>(rng: &mut R) -> f64 {
    let shapes = [
        Shape::new(2, 2, 4, 4),
        Shape::new(2, 3, 4, 4),
        Shape::new(2, 2, 2, 2),
        Shape::new(2, 4, 1, 1),
    ];
    let fx: Vec<Tensor> = shapes.iter().map(|&s| random_tensor(rng, s)).collect();
    let fxh: Vec<Tensor> = shapes.iter().map(|&s| random_tensor(rng, s)).collect();
    let a = FeatureStack::from_tensors(fx.clone());
    let (_, _, grads) = perceptual_loss_grad(&a, &FeatureStack::from_tensors(fxh.clone())).unwrap();
    let mut worst = 0.0f64;
    for k in 0..shapes.len() {
        let n = numeric_grad(&fxh[k], H, |t| {
            let mut stages = fxh.clone();
            stages[k] = t.clone();
            perceptual_loss(&a, &FeatureStack::from_tensors(stages)).unwrap()
        });
        worst = worst.max(grad_rel_err(grads[k].data(), &n));
    }
    worst
}

pub fn discriminator_trial<R: Rng>(rng: &mut R) -> f64 {
    let eps = LossConfig::default().epsilon_log;
    let n = rng.random_range(2..=8);
    let probs = |rng: &mut R| -> Tensor { Tensor::from_fn(Shape::new(n, 1, 1, 1), |_| rng.random_range(0.05..0.95)) };
    let real = probs(rng);
    let fake = probs(rng);
    let (_, g_real, g_fake) = discriminator_loss_grad(real.data(), fake.data(), eps);
    let n_real = numeric_grad(&real, H, |r| discriminator_loss(r.data(), fake.data(), eps));
    let n_fake = numeric_grad(&fake, H, |f| discriminator_loss(real.data(), f.data(), eps));
    grad_rel_err(&g_real, &n_real).max(grad_rel_err(&g_fake, &n_fake))
}

pub fn latent_trial<R: Rng>(rng: &mut R) -> f64 {
    let cfg = LossConfig {
        use_pixel: false,
        use_perceptual: false,
        use_latent: true,
        ..LossConfig::default()
    };
    let x = Tensor::zeros(Shape::new(2, 1, 1, 1));
    let empty = FeatureStack::from_tensors(vec![]);
    let z = LatentCode::new(random_tensor(rng, latent_shape(2))).unwrap();
    let z_hat = random_tensor(rng, latent_shape(2));
    let loss_at = |zh: &Tensor| {
        let zh = LatentCode::new(zh.clone()).unwrap();
        let inputs = GeneratorInputs {
            x: &x,
            x_hat: &x,
            features_x: &empty,
            features_x_hat: &empty,
            z: Some(&z),
            z_hat: Some(&zh),
            d_fake: None,
        };
        generator_loss(&inputs, &cfg).unwrap().total
    };
    let zh = LatentCode::new(z_hat.clone()).unwrap();
    let inputs = GeneratorInputs {
        x: &x,
        x_hat: &x,
        features_x: &empty,
        features_x_hat: &empty,
        z: Some(&z),
        z_hat: Some(&zh),
        d_fake: None,
    };
    let (_, grads) = generator_loss_grad(&inputs, &cfg).unwrap();
    let n = numeric_grad(&z_hat, H, loss_at);
    grad_rel_err(grads.z_hat.unwrap().data(), &n)
}

/// Worst error over `trials` random trials of `f`.
pub fn worst_of<R: Rng>(rng: &mut R, trials: usize, f: fn(&mut R) -> f64) -> f64 {
    (0..trials).map(|_| f(rng)).fold(0.0, f64::max)
}
