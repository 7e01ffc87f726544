//! Localizes objects in the abnormal test images of a dataset with a
//! trained checkpoint, and compares the predicted boxes with the ground
//! truth masks.
//!
//! ```text
//! cargo run --release --example localize_objects -- data run/model.ckpt
//! ```

use std::path::PathBuf;

use railscan::checkpoint::load_checkpoint;
use railscan::dataset::{load_mask, load_split, Split};
use railscan::inference::{Detector, LocalizeConfig, ScoreConfig};
use railscan::model::IMAGE_SIZE;

fn main() -> railscan::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let ckpt_path = PathBuf::from(args.next().unwrap_or_else(|| "run/model.ckpt".into()));

    let ckpt = load_checkpoint(&ckpt_path)?;
    let mut detector = Detector::new(&ckpt, ScoreConfig::default(), LocalizeConfig::default())?;
    let tau = detector.calibrate(&load_split(&dir, Split::Train)?.images)?;
    println!("saliency threshold {tau:.4}");

    let test = load_split(&dir, Split::Test)?;
    let analyses = detector.analyze(&test.images)?;
    let (mut hit, mut total) = (0, 0);
    for (row, a) in test.rows.iter().zip(&analyses) {
        let Some(mask_path) = &row.mask_path else { continue };
        let truth = load_mask(&dir.join(mask_path))?;
        let det = detector.detect(a)?;
        let covered = det.boxes.iter().any(|b| {
            truth
                .iter()
                .enumerate()
                .any(|(i, &t)| t && b.contains(i % IMAGE_SIZE, i / IMAGE_SIZE))
        });
        let overlap = det.mask.iter().zip(&truth).filter(|(p, t)| **p && **t).count();
        let truth_area = truth.iter().filter(|&&t| t).count();
        total += 1;
        if covered {
            hit += 1;
        }
        println!(
            "{:<16} score {:.4}  boxes {:<2}  mask overlap {overlap:>5}/{truth_area:<5} {}",
            row.image_id(),
            det.score,
            det.boxes.len(),
            if covered { "found" } else { "missed" }
        );
        for b in &det.boxes {
            println!("    [{}, {}] - [{}, {}]  area {}", b.x_min, b.y_min, b.x_max, b.y_max, b.area);
        }
    }
    println!("{hit}/{total} objects touched by a predicted box");
    Ok(())
}
