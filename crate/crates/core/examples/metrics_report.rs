//! Evaluation metrics on a synthetic score set: two overlapping normal
//! distributions standing in for normal and abnormal images.
//!
//! ```text
//! cargo run --example metrics_report -- 1.5
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use railscan::metrics::{eer_point, evaluate, kde, roc_curve, Bandwidth, ScoredLabelSet};

fn main() -> railscan::Result<()> {
    let separation: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let abnormal = Normal::new(separation, 1.0).unwrap();
    let neg: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
    let pos: Vec<f64> = (0..200).map(|_| abnormal.sample(&mut rng)).collect();

    let set = ScoredLabelSet::from_pairs(neg.iter().map(|&s| (s, false)).chain(pos.iter().map(|&s| (s, true))))?;
    let r = evaluate(&set)?;
    println!("separation {separation}");
    println!("AUROC {:.4}  AUPRC {:.4}  EER {:.4}", r.auroc, r.auprc, r.eer);
    println!(
        "at threshold {:.4}: precision {:.4}  recall {:.4}  F1 {:.4}",
        r.threshold, r.precision, r.recall, r.f1
    );
    let (fpr, tpr) = eer_point(&roc_curve(&set)?)?;
    println!("equal-error crossing at fpr {fpr:.4}, tpr {tpr:.4}\n");

    let dn = kde(&neg, Bandwidth::Auto)?;
    let da = kde(&pos, Bandwidth::Auto)?;
    let peak = dn.density.iter().chain(&da.density).cloned().fold(0.0, f64::max);
    println!("density (n = normal, a = abnormal)");
    for i in (0..dn.x.len()).step_by(16) {
        let bar = |d: f64, c: char| c.to_string().repeat((40.0 * d / peak).round() as usize);
        println!("{:>7.2} |{}", dn.x[i], bar(dn.density[i], 'n'));
        println!("{:>7.2} |{}", da.x[i], bar(da.density[i], 'a'));
    }
    Ok(())
}
