//! Scoring and localization with a trained model.
//!
//! Every image is reconstructed once; all four score variants come from that
//! single pass. Localization thresholds the channel-mean of `|x - x_hat - C|`
//! at a quantile of the same quantity over normal images.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{encode, reconstruct, FeatureStack, ImageBatch, LatentCode, Mode, Network, IMAGE_SIZE};
use crate::training::{Checkpoint, ErrorMap, EVAL_BATCH};

const PLANE: usize = IMAGE_SIZE * IMAGE_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    /// Mean absolute pixel residual.
    L1,
    /// Euclidean norm of the flattened pixel residual.
    L2,
    /// Mean absolute difference of the 512-d codes of `x` and `x_hat`.
    Bottleneck,
    /// Mean absolute difference of the last encoder activation stage.
    #[default]
    Encoded,
}

impl ScoreVariant {
    pub const ALL: [ScoreVariant; 4] = [
        ScoreVariant::L1,
        ScoreVariant::L2,
        ScoreVariant::Bottleneck,
        ScoreVariant::Encoded,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreVariant::L1 => "l1",
            ScoreVariant::L2 => "l2",
            ScoreVariant::Bottleneck => "bottleneck",
            ScoreVariant::Encoded => "encoded",
        }
    }
}

impl fmt::Display for ScoreVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown score variant {s:?}; expected l1, l2, bottleneck or encoded")))
    }
}

/// All four variant scores of one image.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VariantScores {
    pub l1: f64,
    pub l2: f64,
    pub bottleneck: f64,
    pub encoded: f64,
}

impl VariantScores {
    pub fn get(&self, v: ScoreVariant) -> f64 {
        match v {
            ScoreVariant::L1 => self.l1,
            ScoreVariant::L2 => self.l2,
            ScoreVariant::Bottleneck => self.bottleneck,
            ScoreVariant::Encoded => self.encoded,
        }
    }
}

fn mean_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&p, &q)| (p as f64 - q as f64).abs()).sum::<f64>() / a.len() as f64
}

fn l2_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Per-sample scores from precomputed encodings of `x` and `x_hat`.
pub fn variant_scores(
    x: &ImageBatch,
    x_hat: &ImageBatch,
    encoded_x: (&LatentCode, &FeatureStack),
    encoded_x_hat: (&LatentCode, &FeatureStack),
) -> Result<Vec<VariantScores>> {
    if x.tensor().shape() != x_hat.tensor().shape() {
        return Err(Error::shape("score inputs", x.tensor().shape(), x_hat.tensor().shape()));
    }
    let (z, f) = (encoded_x.0.tensor(), encoded_x.1.last());
    let (z_hat, f_hat) = (encoded_x_hat.0.tensor(), encoded_x_hat.1.last());
    if z.batch() != x.len() || f.shape() != f_hat.shape() || z.shape() != z_hat.shape() {
        return Err(Error::shape("encoded score inputs", z.shape(), z_hat.shape()));
    }
    Ok((0..x.len())
        .map(|i| {
            let (a, b) = (x.tensor().sample(i), x_hat.tensor().sample(i));
            VariantScores {
                l1: mean_abs_diff(a, b),
                l2: l2_diff(a, b),
                bottleneck: mean_abs_diff(z.sample(i), z_hat.sample(i)),
                encoded: mean_abs_diff(f.sample(i), f_hat.sample(i)),
            }
        })
        .collect())
}

/// Per-sample anomaly scores of `x` against its reconstruction `x_hat`.
pub fn anomaly_score(
    x: &ImageBatch,
    x_hat: &ImageBatch,
    encoder: &Network,
    variant: ScoreVariant,
    mode: Mode,
) -> Result<Vec<f64>> {
    let ex = encode(encoder, x, mode)?;
    let ex_hat = encode(encoder, x_hat, mode)?;
    Ok(variant_scores(x, x_hat, (&ex.0, &ex.1), (&ex_hat.0, &ex_hat.1))?
        .iter()
        .map(|s| s.get(variant))
        .collect())
}

/// `M = x - x_hat - C` for one sample, flattened `(3, 128, 128)`.
pub fn difference_map(x: &[f32], x_hat: &[f32], error_map: &ErrorMap) -> Result<Vec<f32>> {
    let c = error_map.data();
    if x.len() != c.len() || x_hat.len() != c.len() {
        return Err(Error::shape("difference map", c.len(), x.len().max(x_hat.len())));
    }
    Ok(x.iter().zip(x_hat).zip(c).map(|((&a, &b), &e)| a - b - e).collect())
}

/// Channel-mean of `|M|`, one value per pixel.
pub fn saliency(m: &[f32]) -> Vec<f32> {
    let channels = m.len() / PLANE;
    (0..PLANE)
        .map(|p| (0..channels).map(|c| m[c * PLANE + p].abs()).sum::<f32>() / channels as f32)
        .collect()
}

/// Linear-interpolated `q`-quantile; `values` must be nonempty.
pub fn quantile(values: &[f32], q: f64) -> f32 {
    let mut v = values.to_vec();
    v.sort_by(f32::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = (pos - lo as f64) as f32;
    v[lo] + t * (v[hi] - v[lo])
}

/// Inclusive pixel bounds of one connected component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
    /// Pixels in the component.
    pub area: usize,
}

impl BoundingBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub score: f64,
    /// Row-major `128 x 128`.
    pub mask: Vec<bool>,
    pub boxes: Vec<BoundingBox>,
}

/// 8-connected components of `mask` with at least `min_area` pixels.
/// Returns the cleaned mask and one tight box per kept component.
pub fn connected_components(mask: &[bool], width: usize, min_area: usize) -> (Vec<bool>, Vec<BoundingBox>) {
    let height = mask.len() / width;
    let mut seen = vec![false; mask.len()];
    let mut kept = vec![false; mask.len()];
    let mut boxes = Vec::new();
    let mut queue = VecDeque::new();
    let mut members = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        members.clear();
        let (mut x0, mut y0, mut x1, mut y1) = (width, height, 0, 0);
        while let Some(p) = queue.pop_front() {
            members.push(p);
            let (x, y) = (p % width, p / width);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                        continue;
                    }
                    let q = ny as usize * width + nx as usize;
                    if mask[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        if members.len() >= min_area {
            members.iter().for_each(|&p| kept[p] = true);
            boxes.push(BoundingBox {
                x_min: x0,
                y_min: y0,
                x_max: x1,
                y_max: y1,
                area: members.len(),
            });
        }
    }
    (kept, boxes)
}

/// Thresholds the saliency of `M` at `tau` and extracts component boxes.
pub fn localize(m: &[f32], tau: f32, min_area: usize) -> Result<(Vec<bool>, Vec<BoundingBox>)> {
    if m.len() != 3 * PLANE {
        return Err(Error::shape("localize input", 3 * PLANE, m.len()));
    }
    let mask: Vec<bool> = saliency(m).into_iter().map(|s| s > tau).collect();
    Ok(connected_components(&mask, IMAGE_SIZE, min_area))
}

/// `(s - min) / (max - min)`; all zeros when every score is equal.
pub fn min_max_scale(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    pub variant: ScoreVariant,
    /// `eval` uses running statistics, `instance` per-image statistics.
    pub normalization: Mode,
    pub batch_size: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            variant: ScoreVariant::Encoded,
            normalization: Mode::Eval,
            batch_size: EVAL_BATCH,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.normalization == Mode::Train {
            return Err(Error::Config("score.normalization must be eval or instance".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("score.batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizeConfig {
    /// Quantile of normal-image saliency used as the mask threshold.
    pub quantile: f64,
    pub min_area: usize,
    /// Normal images drawn from the train split for threshold calibration.
    pub calibration_images: usize,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            quantile: 0.995,
            min_area: 20,
            calibration_images: 64,
        }
    }
}

impl LocalizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.quantile) {
            return Err(Error::Config("localize.quantile must lie in [0, 1]".into()));
        }
        if self.calibration_images == 0 {
            return Err(Error::Config("localize.calibration_images must be at least 1".into()));
        }
        Ok(())
    }
}

/// Reconstruction, scores and difference map of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub scores: VariantScores,
    /// `M`, flattened `(3, 128, 128)`.
    pub difference: Vec<f32>,
}

/// Read-only scorer over a trained checkpoint.
#[derive(Debug, Clone, Copy)]
pub struct Detector<'a> {
    encoder: &'a Network,
    decoder: &'a Network,
    error_map: &'a ErrorMap,
    score: ScoreConfig,
    localize: LocalizeConfig,
    threshold: Option<f32>,
}

impl<'a> Detector<'a> {
    pub fn new(ckpt: &'a Checkpoint, score: ScoreConfig, localize: LocalizeConfig) -> Result<Self> {
        score.validate()?;
        localize.validate()?;
        let error_map = ckpt.error_map.as_ref().ok_or(Error::MissingErrorMap)?;
        Ok(Detector {
            encoder: &ckpt.networks.encoder,
            decoder: &ckpt.networks.decoder,
            error_map,
            score,
            localize,
            threshold: None,
        })
    }

    pub fn score_config(&self) -> ScoreConfig {
        self.score
    }

    pub fn threshold(&self) -> Option<f32> {
        self.threshold
    }

    pub fn set_threshold(&mut self, tau: f32) {
        self.threshold = Some(tau);
    }

    /// Reconstructs and scores `images` in chunks of `batch_size`.
    pub fn analyze(&self, images: &ImageBatch) -> Result<Vec<Analysis>> {
        let data = images.tensor();
        let mode = self.score.normalization;
        let mut out = Vec::with_capacity(images.len());
        for start in (0..images.len()).step_by(self.score.batch_size) {
            let end = (start + self.score.batch_size).min(images.len());
            let x = ImageBatch::new(data.slice_batch(start, end))?;
            let (x_hat, z, feats) = reconstruct(self.encoder, self.decoder, &x, mode)?;
            let (z_hat, feats_hat) = encode(self.encoder, &x_hat, mode)?;
            let scores = variant_scores(&x, &x_hat, (&z, &feats), (&z_hat, &feats_hat))?;
            for (i, scores) in scores.into_iter().enumerate() {
                let difference = difference_map(x.tensor().sample(i), x_hat.tensor().sample(i), self.error_map)?;
                out.push(Analysis { scores, difference });
            }
        }
        Ok(out)
    }

    /// Sets the mask threshold from normal images; returns it.
    pub fn calibrate(&mut self, normals: &ImageBatch) -> Result<f32> {
        let n = normals.len().min(self.localize.calibration_images);
        if n == 0 {
            return Err(Error::EmptyDataset("no normal images for threshold calibration".into()));
        }
        let subset = ImageBatch::new(normals.tensor().slice_batch(0, n))?;
        let pool: Vec<f32> = self
            .analyze(&subset)?
            .iter()
            .flat_map(|a| saliency(&a.difference))
            .collect();
        let tau = quantile(&pool, self.localize.quantile);
        self.threshold = Some(tau);
        Ok(tau)
    }

    pub fn detect(&self, analysis: &Analysis) -> Result<Detection> {
        let tau = self
            .threshold
            .ok_or_else(|| Error::Config("detector threshold is not calibrated".into()))?;
        let (mask, boxes) = localize(&analysis.difference, tau, self.localize.min_area)?;
        Ok(Detection {
            score: analysis.scores.get(self.score.variant),
            mask,
            boxes,
        })
    }
}

/// One scored image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredImage {
    pub image_id: String,
    pub scores: VariantScores,
    pub detection: Detection,
    pub difference: Vec<f32>,
}

/// Scores, masks and boxes for every image, in input order.
pub fn score_dataset(detector: &Detector<'_>, ids: &[String], images: &ImageBatch) -> Result<Vec<ScoredImage>> {
    if ids.len() != images.len() {
        return Err(Error::shape("image ids", images.len(), ids.len()));
    }
    if images.is_empty() {
        return Err(Error::EmptyDataset("no images to score".into()));
    }
    detector
        .analyze(images)?
        .into_iter()
        .zip(ids)
        .map(|(a, id)| {
            Ok(ScoredImage {
                image_id: id.clone(),
                scores: a.scores,
                detection: detector.detect(&a)?,
                difference: a.difference,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::image_shape;
    use crate::tensor::Tensor;

    fn block_field(blocks: &[(usize, usize, usize)]) -> Vec<f32> {
        let mut m = vec![0.0f32; 3 * PLANE];
        for &(x0, y0, side) in blocks {
            for c in 0..3 {
                for y in y0..y0 + side {
                    for x in x0..x0 + side {
                        m[c * PLANE + y * IMAGE_SIZE + x] = if c == 1 { -1.0 } else { 1.0 };
                    }
                }
            }
        }
        m
    }

    #[test]
    fn zero_field_gives_no_boxes() {
        let (mask, boxes) = localize(&vec![0.0; 3 * PLANE], 0.5, 20).unwrap();
        assert!(mask.iter().all(|&b| !b));
        assert!(boxes.is_empty());
    }

    #[test]
    fn blocks_give_tight_boxes() {
        let (_, boxes) = localize(&block_field(&[(30, 40, 10)]), 0.5, 20).unwrap();
        assert_eq!(
            boxes,
            vec![BoundingBox {
                x_min: 30,
                y_min: 40,
                x_max: 39,
                y_max: 49,
                area: 100
            }]
        );
        let (_, boxes) = localize(&block_field(&[(5, 5, 10), (60, 80, 12)]), 0.5, 20).unwrap();
        assert_eq!(boxes.len(), 2);
        let (mask, boxes) = localize(&block_field(&[(5, 5, 10), (60, 80, 4)]), 0.5, 20).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!(mask.iter().filter(|&&b| b).count(), 100);
    }

    #[test]
    fn diagonal_neighbours_join() {
        let mut mask = vec![false; 16];
        mask[0] = true;
        mask[5] = true;
        mask[10] = true;
        let (_, boxes) = connected_components(&mask, 4, 1);
        assert_eq!(boxes.len(), 1);
        assert_eq!((boxes[0].x_max, boxes[0].y_max, boxes[0].area), (2, 2, 3));
    }

    #[test]
    fn difference_map_is_elementwise() {
        let c = ErrorMap::new(Tensor::full(image_shape(1), 0.1)).unwrap();
        let x = vec![0.5f32; 3 * PLANE];
        let x_hat = vec![0.1f32; 3 * PLANE];
        let m = difference_map(&x, &x_hat, &c).unwrap();
        assert!(m.iter().all(|&v| (v - 0.3).abs() < 1e-6));
        assert!(difference_map(&x[..10], &x_hat, &c).is_err());
    }

    #[test]
    fn min_max_scale_closed_form() {
        assert_eq!(min_max_scale(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(min_max_scale(&[3.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.5), 2.5);
        assert_eq!(quantile(&[1.0, 2.0], 1.0), 2.0);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ScoreVariant::ALL {
            assert_eq!(v.name().parse::<ScoreVariant>().unwrap(), v);
        }
        assert!("l3".parse::<ScoreVariant>().is_err());
    }
}
