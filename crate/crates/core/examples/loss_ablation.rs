//! Trains briefly with different autoencoder objectives on the same data
//! and compares the encoded-feature AUROC on the test split.
//!
//! ```text
//! cargo run --release --example loss_ablation -- /tmp/ablation 3 64
//! ```

use std::path::PathBuf;

use railscan::datagen::{build_dataset, DatasetSpec};
use railscan::dataset::{load_split, Split};
use railscan::inference::{anomaly_score, ScoreVariant};
use railscan::losses::LossConfig;
use railscan::metrics::{auroc, ScoredLabelSet};
use railscan::model::reconstruct;
use railscan::training::{train, TrainConfig};
use railscan::Mode;

fn main() -> railscan::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "ablation".into()));
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(3);
    let train_normal = args.next().and_then(|a| a.parse().ok()).unwrap_or(64);

    build_dataset(
        &DatasetSpec {
            train_normal,
            test_normal: 20,
            test_abnormal: 20,
            ..DatasetSpec::default()
        },
        &dir,
    )?;
    let train_split = load_split(&dir, Split::Train)?;
    let test = load_split(&dir, Split::Test)?;

    let base = LossConfig {
        use_pixel: false,
        use_perceptual: false,
        ..LossConfig::default()
    };
    let objectives = [
        ("pixel", LossConfig { use_pixel: true, ..base }),
        ("perceptual", LossConfig { use_perceptual: true, ..base }),
        ("pixel+perceptual", LossConfig::default()),
        ("+latent", LossConfig { use_latent: true, ..LossConfig::default() }),
        (
            "+adversarial",
            LossConfig {
                use_adversarial_generator_term: true,
                ..LossConfig::default()
            },
        ),
    ];

    for (name, loss) in objectives {
        let cfg = TrainConfig {
            epochs,
            loss,
            ..TrainConfig::default()
        };
        let (ckpt, log) = train(&cfg, &train_split.images, |_| {})?;
        let nets = &ckpt.networks;
        let (x_hat, _, _) = reconstruct(&nets.encoder, &nets.decoder, &test.images, Mode::Eval)?;
        let scores = anomaly_score(&test.images, &x_hat, &nets.encoder, ScoreVariant::Encoded, Mode::Eval)?;
        let s = ScoredLabelSet::new(scores, test.labels())?;
        let last = log.epochs.last().unwrap();
        println!("{name:<18} final loss_eg {:>10.3}  encoded AUROC {:.4}", last.loss_eg, auroc(&s)?);
    }
    Ok(())
}
