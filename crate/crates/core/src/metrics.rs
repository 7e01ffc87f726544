//! Image-level detection metrics: ROC and precision-recall curves, their
//! areas, the equal error rate, and kernel density estimates of scores.
//!
//! An image is predicted abnormal iff its score is `>=` the threshold.
//! Thresholds are the distinct scores in descending order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KDE_GRID_POINTS: usize = 256;

/// Scores with binary labels, `true` = abnormal (positive).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLabelSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredLabelSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::shape("scored label set", scores.len(), labels.len()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("scores must be finite".into()));
        }
        Ok(ScoredLabelSet { scores, labels })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, bool)>) -> Result<Self> {
        let (scores, labels) = pairs.into_iter().unzip();
        Self::new(scores, labels)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    fn require_both_classes(&self) -> Result<()> {
        if self.positives() == 0 || self.negatives() == 0 {
            return Err(Error::Config(format!(
                "curve metrics need both classes (positives {}, negatives {})",
                self.positives(),
                self.negatives()
            )));
        }
        Ok(())
    }

    /// Cumulative `(threshold, tp, fp)` at each distinct score, descending.
    pub fn confusion_sweep(&self) -> Vec<(f64, usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut out = Vec::new();
        let (mut tp, mut fp) = (0, 0);
        let mut i = 0;
        while i < order.len() {
            let t = self.scores[order[i]];
            while i < order.len() && self.scores[order[i]] == t {
                if self.labels[order[i]] {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            out.push((t, tp, fp));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub threshold: f64,
}

/// Operating points ordered by descending threshold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurvePoints {
    pub points: Vec<CurvePoint>,
}

/// ROC points `(FPR, TPR)`, starting at `(0, 0)` with threshold `+inf` and
/// ending at `(1, 1)`.
pub fn roc_curve(s: &ScoredLabelSet) -> Result<CurvePoints> {
    s.require_both_classes()?;
    let (p, n) = (s.positives() as f64, s.negatives() as f64);
    let mut points = vec![CurvePoint {
        x: 0.0,
        y: 0.0,
        threshold: f64::INFINITY,
    }];
    points.extend(s.confusion_sweep().into_iter().map(|(t, tp, fp)| CurvePoint {
        x: fp as f64 / n,
        y: tp as f64 / p,
        threshold: t,
    }));
    Ok(CurvePoints { points })
}

/// Area under the piecewise-linear ROC.
///
/// Each step adds `(f_{k+1} - f_k) * t(f_{k+1})` with `t` interpolated
/// along the segment, so a threshold that moves both rates at once earns
/// half credit for its tied pairs.
pub fn auroc(s: &ScoredLabelSet) -> Result<f64> {
    let roc = roc_curve(s)?;
    Ok(roc
        .points
        .windows(2)
        .map(|w| (w[1].x - w[0].x) * 0.5 * (w[0].y + w[1].y))
        .sum())
}

/// Precision-recall points `(recall, precision)` at each distinct threshold.
pub fn pr_curve(s: &ScoredLabelSet) -> Result<CurvePoints> {
    s.require_both_classes()?;
    let p = s.positives() as f64;
    Ok(CurvePoints {
        points: s
            .confusion_sweep()
            .into_iter()
            .map(|(t, tp, fp)| CurvePoint {
                x: tp as f64 / p,
                y: tp as f64 / (tp + fp) as f64,
                threshold: t,
            })
            .collect(),
    })
}

/// Average precision `sum_k (r_k - r_{k-1}) p_k`, with `r_0 = 0`.
pub fn auprc(s: &ScoredLabelSet) -> Result<f64> {
    let pr = pr_curve(s)?;
    let mut prev = 0.0;
    let mut ap = 0.0;
    for pt in &pr.points {
        ap += (pt.x - prev) * pt.y;
        prev = pt.x;
    }
    Ok(ap)
}

/// `(FPR, TPR)` where the piecewise-linear ROC meets `TPR = 1 - FPR`.
pub fn eer_point(roc: &CurvePoints) -> Result<(f64, f64)> {
    let pts = &roc.points;
    if pts.len() < 2 {
        return Err(Error::Config("ROC needs at least two points".into()));
    }
    let g = |p: &CurvePoint| p.x + p.y - 1.0;
    for w in pts.windows(2) {
        let (a, b) = (g(&w[0]), g(&w[1]));
        if a == 0.0 {
            return Ok((w[0].x, w[0].y));
        }
        if a < 0.0 && b >= 0.0 {
            // on the segment, fpr + tpr - 1 is linear in the mixing weight
            let t = -a / (b - a);
            let fpr = w[0].x + t * (w[1].x - w[0].x);
            let tpr = w[0].y + t * (w[1].y - w[0].y);
            return Ok((fpr, tpr));
        }
    }
    Err(Error::Config("ROC never crosses the anti-diagonal".into()))
}

/// Equal error rate: midpoint of FPR and `1 - TPR` at [`eer_point`], which
/// agree to rounding.
pub fn eer(roc: &CurvePoints) -> Result<f64> {
    let (fpr, tpr) = eer_point(roc)?;
    Ok(0.5 * (fpr + (1.0 - tpr)))
}

/// Realized threshold whose ROC point is closest to the anti-diagonal.
pub fn eer_threshold(roc: &CurvePoints) -> Result<f64> {
    roc.points
        .iter()
        .filter(|p| p.threshold.is_finite())
        .min_by(|a, b| (a.x + a.y - 1.0).abs().total_cmp(&(b.x + b.y - 1.0).abs()))
        .map(|p| p.threshold)
        .ok_or_else(|| Error::Config("ROC has no realized thresholds".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False when nothing was predicted positive; precision is then 0.
    pub precision_defined: bool,
}

pub fn prf_at_threshold(s: &ScoredLabelSet, threshold: f64) -> Prf {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&sc, &l) in s.scores.iter().zip(&s.labels) {
        match (sc >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    prf_from_counts(tp, fp, fn_)
}

pub fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
    let precision_defined = tp + fp > 0;
    let precision = if precision_defined { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf {
        precision,
        recall,
        f1,
        precision_defined,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Silverman's rule of thumb.
    Auto,
    Fixed(f64),
}

/// Gaussian KDE sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeGrid {
    pub bandwidth: f64,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

impl KdeGrid {
    /// Trapezoid integral of the sampled density.
    pub fn integral(&self) -> f64 {
        self.x
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| (x[1] - x[0]) * 0.5 * (d[0] + d[1]))
            .sum()
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, falling back to the standard
/// deviation when the IQR is zero and to a scale-relative width when the
/// sample is constant.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        _ => return if mean != 0.0 { 0.1 * mean.abs() } else { 1.0 },
    };
    0.9 * spread * n.powf(-0.2)
}

pub fn gaussian_kernel(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Density on [`KDE_GRID_POINTS`] points spanning `[min - 3h, max + 3h]`.
pub fn kde(values: &[f64], bandwidth: Bandwidth) -> Result<KdeGrid> {
    if values.is_empty() {
        return Err(Error::EmptyDataset("no values for density estimate".into()));
    }
    let h = match bandwidth {
        Bandwidth::Auto => silverman_bandwidth(values),
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(Error::Config(format!("bandwidth must be positive, got {h}"))),
    };
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
    let x: Vec<f64> = (0..KDE_GRID_POINTS).map(|i| lo + step * i as f64).collect();
    let density = kde_on_grid(values, h, &x)?;
    Ok(KdeGrid { bandwidth: h, x, density })
}

/// Gaussian KDE with bandwidth `h` evaluated at the given points.
pub fn kde_on_grid(values: &[f64], h: f64, grid: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyDataset("no values for density estimate".into()));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
    }
    let norm = 1.0 / (values.len() as f64 * h);
    Ok(grid
        .iter()
        .map(|&g| norm * values.iter().map(|&v| gaussian_kernel((g - v) / h)).sum::<f64>())
        .collect())
}

/// Scalar metrics of one scored set, matching the results-table columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub auprc: f64,
    pub eer: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Realized threshold nearest the equal-error crossing.
    pub threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub fn evaluate(s: &ScoredLabelSet) -> Result<EvalReport> {
    let roc = roc_curve(s)?;
    let threshold = eer_threshold(&roc)?;
    let prf = prf_at_threshold(s, threshold);
    Ok(EvalReport {
        auroc: auroc(s)?,
        auprc: auprc(s)?,
        eer: eer(&roc)?,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        threshold,
        n_pos: s.positives(),
        n_neg: s.negatives(),
    })
}
