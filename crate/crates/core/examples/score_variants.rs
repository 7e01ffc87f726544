//! Scores a rendered scene and the same scene with a composited object
//! under each of the four anomaly scores.
//!
//! With a checkpoint the trained autoencoder is used; without one the
//! networks are freshly initialized, which still shows how the scores are
//! computed but not how well they separate.
//!
//! ```text
//! cargo run --release --example score_variants -- run/model.ckpt
//! ```

use std::path::PathBuf;

use railscan::checkpoint::load_checkpoint;
use railscan::datagen::{composite_anomaly, generate_normal, AnomalySpec, SceneParams};
use railscan::inference::{variant_scores, ScoreVariant};
use railscan::model::{build_networks, encode, image_shape, reconstruct, ArchConfig};
use railscan::{ImageBatch, Mode, Networks, Tensor};

fn to_batch(images: &[&image::RgbImage]) -> railscan::Result<ImageBatch> {
    let mut data = Vec::new();
    for img in images {
        for c in 0..3 {
            data.extend(img.pixels().map(|p| p.0[c] as f32 / 127.5 - 1.0));
        }
    }
    ImageBatch::new(Tensor::from_vec(image_shape(images.len()), data)?)
}

fn main() -> railscan::Result<()> {
    let nets: Networks = match std::env::args().nth(1) {
        Some(p) => load_checkpoint(&PathBuf::from(p))?.networks,
        None => build_networks(0, &ArchConfig::default()),
    };

    let scene = generate_normal(&SceneParams::default(), 7)?;
    let obj = composite_anomaly(&scene, &AnomalySpec::default(), 11)?;
    println!(
        "object: {:?}, {} pixels ({:.1}% of the frame)",
        obj.shape,
        obj.mask_area(),
        100.0 * obj.mask_area() as f64 / (128.0 * 128.0)
    );

    let x = to_batch(&[&scene, &obj.image])?;
    let (x_hat, z, fx) = reconstruct(&nets.encoder, &nets.decoder, &x, Mode::Eval)?;
    let (z_hat, fx_hat) = encode(&nets.encoder, &x_hat, Mode::Eval)?;
    let scores = variant_scores(&x, &x_hat, (&z, &fx), (&z_hat, &fx_hat))?;

    println!("{:<12}{:>14}{:>14}", "score", "normal", "with object");
    for v in ScoreVariant::ALL {
        println!("{:<12}{:>14.6}{:>14.6}", v.name(), scores[0].get(v), scores[1].get(v));
    }
    Ok(())
}
