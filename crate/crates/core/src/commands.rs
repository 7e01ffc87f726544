//! The four operator commands, as library functions.
//!
//! Each takes a validated [`RunConfig`] and an output location, does all
//! validation before writing anything, and returns what it wrote.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::datagen::build_dataset;
use crate::dataset::{load_rows, load_split, Label, Manifest, Split, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::inference::{min_max_scale, score_dataset, Detector, ScoreVariant, ScoredImage};
use crate::metrics::{evaluate, kde_on_grid, pr_curve, roc_curve, silverman_bandwidth, CurvePoints, EvalReport, ScoredLabelSet, KDE_GRID_POINTS};
use crate::model::IMAGE_SIZE;
use crate::training::{compute_error_map, train, EpochRecord, TrainLog};

pub const SCORES_FILE: &str = "scores.csv";
pub const REPORT_FILE: &str = "report.json";
pub const BOXES_FILE: &str = "boxes.jsonl";
pub const MASKS_DIR: &str = "masks";
pub const ROC_FILE: &str = "roc.csv";
pub const PR_FILE: &str = "pr.csv";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const DENSITY_FILE: &str = "density.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Renders the dataset into `out_dir`; returns the manifest path.
pub fn cmd_gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    build_dataset(&cfg.data, out_dir)?;
    Ok(out_dir.join(MANIFEST_FILE))
}

/// Paths written by [`cmd_train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub history: TrainLog,
}

/// Trains on the train split of `cfg.train.dataset` and writes the
/// checkpoint (with error map) plus a per-epoch log beside it.
/// Refuses to overwrite an existing checkpoint.
pub fn cmd_train(cfg: &RunConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutputs> {
    cfg.validate()?;
    let ckpt_path = cfg.train.checkpoint.clone();
    if ckpt_path.exists() {
        return Err(Error::ResumeUnsupported(ckpt_path));
    }
    let split = load_split(&cfg.train.dataset, Split::Train)?;
    let (mut ckpt, history) = train(&cfg.train, &split.images, on_epoch)?;
    let nets = &ckpt.networks;
    ckpt.error_map = Some(compute_error_map(&nets.encoder, &nets.decoder, &split.images)?);
    save_checkpoint(&ckpt_path, &ckpt)?;
    let log = ckpt_path.with_file_name(TRAIN_LOG_FILE);
    history.write_csv(&log)?;
    Ok(TrainOutputs {
        checkpoint: ckpt_path,
        log,
        history,
    })
}

/// One row of `scores.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub image_id: String,
    pub label: Option<Label>,
    pub raw_score: f64,
    pub scaled_score: f64,
    pub n_boxes: usize,
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: ScoreVariant,
    #[serde(flatten)]
    pub metrics: EvalReport,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub variant: ScoreVariant,
    #[serde(flatten)]
    pub metrics: EvalReport,
    /// Saliency threshold used for masks.
    pub mask_threshold: f32,
    pub by_variant: Vec<VariantRow>,
}

/// Everything [`cmd_eval`] produced.
#[derive(Debug, Clone)]
pub struct EvalOutputs {
    pub summary: EvalSummary,
    pub scored: Vec<ScoredImage>,
    pub labels: Vec<bool>,
}

#[derive(Serialize)]
struct BoxLine<'a> {
    image_id: &'a str,
    score: f64,
    boxes: &'a [crate::inference::BoundingBox],
}

fn write_curve(path: &Path, curve: &CurvePoints, x: &str, y: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([x, y, "threshold"])?;
    for p in &curve.points {
        w.write_record([p.x.to_string(), p.y.to_string(), p.threshold.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn mask_image(mask: &[bool]) -> GrayImage {
    let size = IMAGE_SIZE as u32;
    GrayImage::from_fn(size, size, |x, y| {
        Luma([if mask[(y * size + x) as usize] { 255 } else { 0 }])
    })
}

/// Scores the test split with the checkpoint and writes scores, report,
/// boxes, masks and curves into `out_dir`.
pub fn cmd_eval(cfg: &RunConfig, out_dir: &Path) -> Result<EvalOutputs> {
    cfg.validate()?;
    let dataset = &cfg.train.dataset;
    let manifest = Manifest::read(dataset)?;
    let test_rows = manifest.split(Split::Test);
    if test_rows.is_empty() {
        return Err(Error::EmptyDataset(format!("{}: no test images", dataset.display())));
    }
    let train_rows = manifest.split(Split::Train);
    let calib_rows: Vec<_> = train_rows
        .into_iter()
        .take(cfg.localize.calibration_images)
        .collect();
    let ckpt = load_checkpoint(&cfg.train.checkpoint)?;
    let mut detector = Detector::new(&ckpt, cfg.score, cfg.localize)?;
    let test = load_rows(dataset, &test_rows)?;
    let calib = load_rows(dataset, &calib_rows)?;

    let mask_threshold = detector.calibrate(&calib)?;
    let ids: Vec<String> = test_rows.iter().map(|r| r.image_id()).collect();
    let scored = score_dataset(&detector, &ids, &test)?;
    let labels: Vec<bool> = test_rows.iter().map(|r| r.label.is_abnormal()).collect();

    let variant = cfg.score.variant;
    let raw: Vec<f64> = scored.iter().map(|s| s.detection.score).collect();
    let main_set = ScoredLabelSet::new(raw.clone(), labels.clone())?;
    let metrics = evaluate(&main_set)?;
    let by_variant = ScoreVariant::ALL
        .into_iter()
        .map(|v| {
            let s = ScoredLabelSet::new(scored.iter().map(|x| x.scores.get(v)).collect(), labels.clone())?;
            Ok(VariantRow {
                variant: v,
                metrics: evaluate(&s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = EvalSummary {
        variant,
        metrics,
        mask_threshold,
        by_variant,
    };

    let masks_dir = out_dir.join(MASKS_DIR);
    create_dir(&masks_dir)?;
    let scaled = min_max_scale(&raw);
    let records: Vec<ScoreRecord> = scored
        .iter()
        .zip(&test_rows)
        .zip(&scaled)
        .map(|((s, row), &scaled_score)| ScoreRecord {
            image_id: s.image_id.clone(),
            label: Some(row.label),
            raw_score: s.detection.score,
            scaled_score,
            n_boxes: s.detection.boxes.len(),
        })
        .collect();
    write_scores(&out_dir.join(SCORES_FILE), &records)?;

    let boxes_path = out_dir.join(BOXES_FILE);
    let mut boxes = Vec::new();
    for s in &scored {
        let p = masks_dir.join(format!("{}.png", s.image_id));
        mask_image(&s.detection.mask)
            .save_with_format(&p, image::ImageFormat::Png)
            .map_err(|source| Error::Image { path: p, source })?;
        serde_json::to_writer(
            &mut boxes,
            &BoxLine {
                image_id: &s.image_id,
                score: s.detection.score,
                boxes: &s.detection.boxes,
            },
        )?;
        boxes.push(b'\n');
    }
    fs::write(&boxes_path, boxes).map_err(|e| Error::io(&boxes_path, e))?;

    write_curve(&out_dir.join(ROC_FILE), &roc_curve(&main_set)?, "fpr", "tpr")?;
    write_curve(&out_dir.join(PR_FILE), &pr_curve(&main_set)?, "recall", "precision")?;
    let report_path = out_dir.join(REPORT_FILE);
    let mut f = fs::File::create(&report_path).map_err(|e| Error::io(&report_path, e))?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    writeln!(f).map_err(|e| Error::io(&report_path, e))?;

    Ok(EvalOutputs {
        summary,
        scored,
        labels,
    })
}

/// One named score set for [`cmd_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub name: String,
    pub records: Vec<ScoreRecord>,
}

impl ScoreSet {
    pub fn read(path: &Path) -> Result<Self> {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scores".into());
        Ok(ScoreSet {
            name,
            records: read_scores(path)?,
        })
    }

    /// Splits into `<name>_normal` and `<name>_abnormal` by label;
    /// unlabelled rows are dropped.
    pub fn split_by_label(&self) -> Vec<ScoreSet> {
        [Label::Normal, Label::Abnormal]
            .into_iter()
            .map(|l| ScoreSet {
                name: format!("{}_{}", self.name, if l.is_abnormal() { "abnormal" } else { "normal" }),
                records: self.records.iter().filter(|r| r.label == Some(l)).cloned().collect(),
            })
            .filter(|s| !s.records.is_empty())
            .collect()
    }

    fn raw(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.raw_score).collect()
    }
}

/// What [`cmd_report`] wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutputs {
    pub density: PathBuf,
    pub columns: Vec<String>,
    /// Per-set metrics for sets holding both labels.
    pub metrics: Vec<(String, EvalReport)>,
}

/// Writes one density column per set on a shared grid, and ROC/PR curves
/// for each set holding both labels.
pub fn cmd_report(sets: &[ScoreSet], out_dir: &Path) -> Result<ReportOutputs> {
    if sets.is_empty() || sets.iter().any(|s| s.records.is_empty()) {
        return Err(Error::EmptyDataset("report needs nonempty score sets".into()));
    }
    let mut names: Vec<String> = Vec::new();
    for s in sets {
        let mut name = s.name.clone();
        let mut k = 2;
        while names.contains(&name) {
            name = format!("{}_{k}", s.name);
            k += 1;
        }
        names.push(name);
    }
    let values: Vec<Vec<f64>> = sets.iter().map(|s| s.raw()).collect();
    let bandwidths: Vec<f64> = values.iter().map(|v| silverman_bandwidth(v)).collect();
    let h_max = bandwidths.iter().copied().fold(0.0, f64::max);
    let lo = values.iter().flatten().copied().fold(f64::INFINITY, f64::min) - 3.0 * h_max;
    let hi = values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h_max;
    let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..KDE_GRID_POINTS).map(|i| lo + step * i as f64).collect();
    let columns: Vec<Vec<f64>> = values
        .iter()
        .zip(&bandwidths)
        .map(|(v, &h)| kde_on_grid(v, h, &grid))
        .collect::<Result<_>>()?;

    create_dir(out_dir)?;
    let density = out_dir.join(DENSITY_FILE);
    let mut w = csv::Writer::from_path(&density)?;
    w.write_record(std::iter::once("score".to_string()).chain(names.iter().cloned()))?;
    for (i, x) in grid.iter().enumerate() {
        w.write_record(std::iter::once(x.to_string()).chain(columns.iter().map(|c| c[i].to_string())))?;
    }
    w.flush().map_err(|e| Error::io(&density, e))?;

    let mut metrics = Vec::new();
    for (set, name) in sets.iter().zip(&names) {
        let labelled: Vec<(f64, bool)> = set
            .records
            .iter()
            .filter_map(|r| r.label.map(|l| (r.raw_score, l.is_abnormal())))
            .collect();
        let s = ScoredLabelSet::from_pairs(labelled)?;
        if s.positives() == 0 || s.negatives() == 0 {
            continue;
        }
        write_curve(&out_dir.join(format!("roc_{name}.csv")), &roc_curve(&s)?, "fpr", "tpr")?;
        write_curve(&out_dir.join(format!("pr_{name}.csv")), &pr_curve(&s)?, "recall", "precision")?;
        metrics.push((name.clone(), evaluate(&s)?));
    }
    Ok(ReportOutputs {
        density,
        columns: names,
        metrics,
    })
}
