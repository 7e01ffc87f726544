//! Renders a small synthetic track dataset.
//!
//! ```text
//! cargo run --release --example generate_dataset -- /tmp/tracks 16 4 4
//! ```

use std::path::PathBuf;

use railscan::datagen::{build_dataset, DatasetSpec};
use railscan::dataset::Label;

fn main() -> railscan::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "tracks".into()));
    let mut count = |default: usize| args.next().and_then(|a| a.parse().ok()).unwrap_or(default);
    let spec = DatasetSpec {
        train_normal: count(16),
        test_normal: count(4),
        test_abnormal: count(4),
        ..DatasetSpec::default()
    };

    let manifest = build_dataset(&spec, &out)?;
    let abnormal = manifest.rows.iter().filter(|r| r.label == Label::Abnormal).count();
    println!(
        "wrote {} images ({} abnormal) to {}",
        manifest.rows.len(),
        abnormal,
        out.display()
    );
    Ok(())
}
