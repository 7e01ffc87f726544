//! Generates a dataset, trains on its normal images and scores the test
//! split with every score variant.
//!
//! ```text
//! cargo run --release --example train_and_evaluate -- /tmp/tracks 15 256
//! ```

use std::path::PathBuf;

use railscan::datagen::{build_dataset, DatasetSpec};
use railscan::dataset::{load_mask, load_split, Split};
use railscan::inference::{saliency, score_dataset, Detector, LocalizeConfig, ScoreConfig, ScoreVariant};
use railscan::metrics::{auroc, ScoredLabelSet};
use railscan::training::{compute_error_map, train, TrainConfig};

fn main() -> railscan::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "tracks".into()));
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(15);
    let train_normal = args.next().and_then(|a| a.parse().ok()).unwrap_or(256);

    let spec = DatasetSpec {
        train_normal,
        ..DatasetSpec::default()
    };
    build_dataset(&spec, &dir)?;
    let train_split = load_split(&dir, Split::Train)?;
    let test_split = load_split(&dir, Split::Test)?;

    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let (mut ckpt, _log) = train(&cfg, &train_split.images, |r| {
        println!(
            "epoch {:3}  loss_d {:.4}  loss_eg {:.4}  D(x) {:.3}  D(x_hat) {:.3}  {:.1}s",
            r.epoch, r.loss_d, r.loss_eg, r.d_real_mean, r.d_fake_mean, r.seconds
        )
    })?;
    let nets = &ckpt.networks;
    ckpt.error_map = Some(compute_error_map(&nets.encoder, &nets.decoder, &train_split.images)?);

    let mut detector = Detector::new(&ckpt, ScoreConfig::default(), LocalizeConfig::default())?;
    let tau = detector.calibrate(&train_split.images)?;
    let ids: Vec<String> = test_split.rows.iter().map(|r| r.image_id()).collect();
    let scored = score_dataset(&detector, &ids, &test_split.images)?;
    let labels = test_split.labels();

    for v in ScoreVariant::ALL {
        let s = ScoredLabelSet::new(scored.iter().map(|x| x.scores.get(v)).collect(), labels.clone())?;
        println!("{v:>10}  AUROC {:.4}", auroc(&s)?);
    }

    let mut hits = 0;
    let mut abnormal = 0;
    for (row, img) in test_split.rows.iter().zip(&scored) {
        let Some(mask_path) = &row.mask_path else { continue };
        let truth = load_mask(&dir.join(mask_path))?;
        let sal = saliency(&img.difference);
        let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0, 0.0, 0);
        for (s, &t) in sal.iter().zip(&truth) {
            if t {
                inside += s;
                n_in += 1;
            } else {
                outside += s;
                n_out += 1;
            }
        }
        abnormal += 1;
        if inside / n_in as f32 > outside / n_out as f32 {
            hits += 1;
        }
    }
    println!("threshold {tau:.4}; inside > outside on {hits}/{abnormal} abnormal images");
    Ok(())
}
