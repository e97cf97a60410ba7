//! Detection-quality metrics: IoU, greedy matching, PASCAL-VOC average
//! precision and the mAP-based equality criterion used as the metamorphic
//! oracle, plus the classifier that names what went wrong on a failing pair.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{Detection, DetectionSet};
use crate::geometry::BBox;

/// Absolute tolerance when comparing an mAP against 1.
pub const MAP_EQUALITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("IoU threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("failure classification requested for a passing pair (mAP = {0})")]
    NotAFailure(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Area under the monotone precision envelope (VOC2010 onwards).
    #[default]
    AllPoint,
    /// Mean of the envelope sampled at recall 0, 0.1, ..., 1 (VOC2007).
    ElevenPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub iou_threshold: f64,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5, interpolation: Interpolation::AllPoint }
    }
}

impl MetricsConfig {
    pub fn new(iou_threshold: f64, interpolation: Interpolation) -> Result<Self, MetricsError> {
        if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
            return Err(MetricsError::InvalidThreshold(iou_threshold));
        }
        Ok(Self { iou_threshold, interpolation })
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let Some(inter) = a.intersect(b) else {
        return 0.0;
    };
    let inter = inter.area();
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub prediction: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_ground_truth: Vec<usize>,
}

/// Descending confidence, ties broken by `(label, x, y, w, h)` and finally by
/// input position, so the order is total and reproducible.
fn rank_cmp(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.label.cmp(&b.label))
        .then_with(|| {
            a.bbox
                .order_key()
                .iter()
                .zip(b.bbox.order_key().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Indices of `detections` in evaluation order.
pub fn rank_order(detections: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| rank_cmp(&detections[i], &detections[j]).then(i.cmp(&j)));
    order
}

/// Walks `ranked` predictions and assigns each to the still-free candidate of
/// maximal IoU when that IoU reaches the threshold. Returns, per prediction
/// in input order, the matched ground-truth index and IoU.
fn greedy_assign<'a>(
    predictions: &[&'a Detection],
    ground_truth: &[BBox],
    same_class: impl Fn(&'a Detection, usize) -> bool,
    threshold: f64,
) -> Vec<Option<(usize, f64)>> {
    let owned: Vec<Detection> = predictions.iter().map(|d| (*d).clone()).collect();
    let order = rank_order(&owned);
    let mut taken = vec![false; ground_truth.len()];
    let mut result = vec![None; predictions.len()];
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in ground_truth.iter().enumerate() {
            if taken[g] || !same_class(predictions[p], g) {
                continue;
            }
            let v = iou(&predictions[p].bbox, gt);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= threshold {
                taken[g] = true;
                result[p] = Some((g, v));
            }
        }
    }
    result
}

pub fn match_greedy(
    predictions: &DetectionSet,
    ground_truth: &DetectionSet,
    cfg: &MetricsConfig,
) -> MatchResult {
    let preds: Vec<&Detection> = predictions.detections.iter().collect();
    let gt_boxes: Vec<BBox> = ground_truth.boxes().copied().collect();
    let assigned = greedy_assign(
        &preds,
        &gt_boxes,
        |p, g| p.label == ground_truth.detections[g].label,
        cfg.iou_threshold,
    );

    let mut result = MatchResult::default();
    let mut gt_used = vec![false; gt_boxes.len()];
    for (p, a) in assigned.iter().enumerate() {
        match a {
            Some((g, v)) => {
                gt_used[*g] = true;
                result.pairs.push(MatchedPair { prediction: p, ground_truth: *g, iou: *v });
            }
            None => result.unmatched_predictions.push(p),
        }
    }
    result.unmatched_ground_truth = (0..gt_boxes.len()).filter(|&g| !gt_used[g]).collect();
    result
}

/// Average precision for a single class.
///
/// Returns 0 when there is no ground truth; callers decide how such classes
/// enter a mean.
pub fn voc_ap(predictions: &[Detection], ground_truth: &[BBox], cfg: &MetricsConfig) -> f64 {
    if ground_truth.is_empty() {
        return 0.0;
    }
    let refs: Vec<&Detection> = predictions.iter().collect();
    let assigned = greedy_assign(&refs, ground_truth, |_, _| true, cfg.iou_threshold);
    let order = rank_order(predictions);

    let n_gt = ground_truth.len() as f64;
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(order.len());
    let mut recall = Vec::with_capacity(order.len());
    let mut is_tp = Vec::with_capacity(order.len());
    for (rank, &p) in order.iter().enumerate() {
        let hit = assigned[p].is_some();
        if hit {
            tp += 1;
        }
        is_tp.push(hit);
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / n_gt);
    }

    // envelope[k] = max precision at any rank >= k
    let mut envelope = precision.clone();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }

    match cfg.interpolation {
        Interpolation::AllPoint => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for k in 0..order.len() {
                if is_tp[k] {
                    ap += (recall[k] - prev_recall) * envelope[k];
                    prev_recall = recall[k];
                }
            }
            ap
        }
        Interpolation::ElevenPoint => {
            let mut sum = 0.0;
            for step in 0..=10 {
                let level = step as f64 / 10.0;
                let p = (0..order.len())
                    .filter(|&k| recall[k] >= level - 1e-12)
                    .map(|k| precision[k])
                    .fold(0.0, f64::max);
                sum += p;
            }
            sum / 11.0
        }
    }
}

/// Mean AP over every label present in either set. Labels that only appear
/// among the predictions contribute an AP of 0.
pub fn map_score(
    predictions: &DetectionSet,
    ground_truth: &DetectionSet,
    cfg: &MetricsConfig,
) -> f64 {
    let universe: BTreeSet<&str> = ground_truth
        .detections
        .iter()
        .chain(predictions.detections.iter())
        .map(|d| d.label.as_str())
        .collect();
    if universe.is_empty() {
        return 1.0;
    }
    let total: f64 = universe
        .iter()
        .map(|label| {
            let preds: Vec<Detection> = predictions
                .detections
                .iter()
                .filter(|d| d.label == *label)
                .cloned()
                .collect();
            let gts: Vec<BBox> = ground_truth
                .detections
                .iter()
                .filter(|d| d.label == *label)
                .map(|d| d.bbox)
                .collect();
            voc_ap(&preds, &gts, cfg)
        })
        .sum();
    total / universe.len() as f64
}

/// The equality criterion: the synthetic prediction set, with the inserted
/// object's own prediction already removed, must reach an mAP of exactly 1
/// against the baseline.
pub fn equality_criterion(
    baseline: &DetectionSet,
    synthetic_pruned: &DetectionSet,
    cfg: &MetricsConfig,
) -> (bool, f64) {
    let map = map_score(synthetic_pruned, baseline, cfg);
    ((map - 1.0).abs() <= MAP_EQUALITY_TOLERANCE, map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    /// A baseline object is no longer found.
    RecognitionMiss,
    /// A prediction appears where the baseline had nothing.
    RecognitionSpurious,
    /// A baseline object is found in place but under another label.
    Classification,
    /// A baseline object is found with the right label but a drifted box.
    Localization,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureType {
    pub kind: FailureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<usize>,
}

impl FailureType {
    fn new(kind: FailureKind, baseline: Option<usize>, synthetic: Option<usize>) -> Self {
        Self { kind, baseline, synthetic }
    }
}

/// Names the failures on a pair that violates the equality criterion.
///
/// Every applicable kind is reported. Geometric rules run first; if they are
/// silent (e.g. a duplicate prediction steals a match) the unmatched items of
/// the per-class greedy matching are reported as recognition failures, so a
/// failing pair never yields an empty list.
pub fn classify_failures(
    baseline: &DetectionSet,
    synthetic_pruned: &DetectionSet,
    cfg: &MetricsConfig,
) -> Result<Vec<FailureType>, MetricsError> {
    let (holds, map) = equality_criterion(baseline, synthetic_pruned, cfg);
    if holds {
        return Err(MetricsError::NotAFailure(map));
    }
    let eps = cfg.iou_threshold;
    let base = &baseline.detections;
    let synth = &synthetic_pruned.detections;
    let mut out = Vec::new();

    for (j, b) in base.iter().enumerate() {
        let any_hit = synth.iter().any(|p| iou(&p.bbox, &b.bbox) >= eps);
        let drifted = synth.iter().any(|p| {
            let v = iou(&p.bbox, &b.bbox);
            p.label == b.label && v > 0.0 && v < eps
        });
        if !any_hit && !drifted {
            out.push(FailureType::new(FailureKind::RecognitionMiss, Some(j), None));
        }
    }

    for (i, p) in synth.iter().enumerate() {
        let mut hit_any = false;
        for (j, b) in base.iter().enumerate() {
            if iou(&p.bbox, &b.bbox) >= eps {
                hit_any = true;
                if p.label != b.label {
                    out.push(FailureType::new(FailureKind::Classification, Some(j), Some(i)));
                }
            }
        }
        let best_same = base
            .iter()
            .enumerate()
            .filter(|(_, b)| b.label == p.label)
            .map(|(j, b)| (j, iou(&p.bbox, &b.bbox)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        let localized = match best_same {
            Some((j, v)) if v > 0.0 && v < eps => {
                out.push(FailureType::new(FailureKind::Localization, Some(j), Some(i)));
                true
            }
            _ => false,
        };
        if !hit_any && !localized {
            out.push(FailureType::new(FailureKind::RecognitionSpurious, None, Some(i)));
        }
    }

    if out.is_empty() {
        let m = match_greedy(synthetic_pruned, baseline, cfg);
        out.extend(
            m.unmatched_ground_truth
                .iter()
                .map(|&j| FailureType::new(FailureKind::RecognitionMiss, Some(j), None)),
        );
        out.extend(
            m.unmatched_predictions
                .iter()
                .map(|&i| FailureType::new(FailureKind::RecognitionSpurious, None, Some(i))),
        );
    }
    Ok(out)
}
