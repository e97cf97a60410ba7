//! One metamorphic trial: composite, query, drop the inserted object's own
//! prediction, compare the rest against the baseline.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::Clock;
use crate::detection::{Detection, DetectionSet};
use crate::detector::{Detector, Probe};
use crate::extraction::ObjectInstance;
use crate::geometry::BBox;
use crate::image::ImageBuffer;
use crate::insertion::{composite, Mode, Placement, ProbeVerdict};
use crate::metrics::{classify_failures, equality_criterion, iou, FailureType, MetricsConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Skipped,
}

impl Verdict {
    /// Skipped trials count as non-failing positions during relocation.
    pub fn as_probe(&self) -> ProbeVerdict {
        match self {
            Verdict::Pass => ProbeVerdict::Pass,
            Verdict::Fail => ProbeVerdict::Fail,
            Verdict::Skipped => ProbeVerdict::Invalid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub metrics: MetricsConfig,
    /// IoU with the inserted box at which a prediction is attributed to it.
    pub eps_excl: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { metrics: MetricsConfig::default(), eps_excl: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub id: String,
    pub background: String,
    pub category: String,
    pub baseline: DetectionSet,
    pub placement: Placement,
    pub inserted_bbox: BBox,
    pub verdict: Verdict,
    /// Absent when the trial was skipped.
    pub map: Option<f64>,
    pub failures: Vec<FailureType>,
    pub excluded: Vec<Detection>,
    pub latency_ms: u64,
    pub error: Option<String>,
    pub synthetic: Option<ImageBuffer>,
}

/// One line of `trials.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub id: String,
    pub background: String,
    pub object_id: String,
    pub category: String,
    pub mode: Mode,
    pub center: [f64; 2],
    pub scale: f64,
    pub anchor_index: Option<usize>,
    pub verdict: Verdict,
    pub map: Option<f64>,
    pub failures: Vec<FailureType>,
    pub excluded: Vec<Detection>,
    pub latency_ms: u64,
}

impl Trial {
    pub fn record(&self) -> TrialRecord {
        TrialRecord {
            id: self.id.clone(),
            background: self.background.clone(),
            object_id: self.placement.object_id.clone(),
            category: self.category.clone(),
            mode: self.placement.mode,
            center: [self.placement.center.x, self.placement.center.y],
            scale: self.placement.scale,
            anchor_index: self.placement.anchor_index,
            verdict: self.verdict,
            map: self.map,
            failures: self.failures.clone(),
            excluded: self.excluded.clone(),
            latency_ms: self.latency_ms,
        }
    }
}

impl TrialRecord {
    /// Whether verdict, mAP and failure list agree with each other.
    pub fn is_consistent(&self) -> bool {
        match (self.verdict, self.map) {
            (Verdict::Pass, Some(m)) => m == 1.0 && self.failures.is_empty(),
            (Verdict::Fail, Some(m)) => m < 1.0 && !self.failures.is_empty(),
            (Verdict::Skipped, None) => self.failures.is_empty(),
            _ => false,
        }
    }
}

/// Stable identifier of a synthetic image.
pub fn trial_id(background: &str, placement: &Placement) -> String {
    let mut h = Sha256::new();
    h.update(background.as_bytes());
    h.update([0]);
    h.update(placement.object_id.as_bytes());
    h.update([0]);
    h.update(placement.center.x.to_le_bytes());
    h.update(placement.center.y.to_le_bytes());
    h.update(placement.scale.to_le_bytes());
    h.update(placement.mode.as_str().as_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Splits off every detection whose IoU with the inserted box reaches
/// `eps_excl`, whatever its label. Both halves keep their original order.
pub fn exclude_inserted(
    synthetic: &DetectionSet,
    inserted_bbox: &BBox,
    eps_excl: f64,
) -> (DetectionSet, Vec<Detection>) {
    let (excluded, kept): (Vec<Detection>, Vec<Detection>) = synthetic
        .detections
        .iter()
        .cloned()
        .partition(|d| iou(&d.bbox, inserted_bbox) >= eps_excl);
    (DetectionSet::new(synthetic.image_id.clone(), kept), excluded)
}

#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    background: &ImageBuffer,
    background_hash: &str,
    baseline: &DetectionSet,
    object: &ObjectInstance,
    placement: &Placement,
    detector: &dyn Detector,
    cfg: &OracleConfig,
    clock: &dyn Clock,
) -> Trial {
    let inserted_bbox = placement.bbox();
    let mut trial = Trial {
        id: trial_id(background_hash, placement),
        background: background_hash.to_string(),
        category: object.label.clone(),
        baseline: baseline.clone(),
        placement: placement.clone(),
        inserted_bbox,
        verdict: Verdict::Skipped,
        map: None,
        failures: Vec::new(),
        excluded: Vec::new(),
        latency_ms: 0,
        error: None,
        synthetic: None,
    };
    let synthetic = match composite(background, object, placement) {
        Ok(img) => img,
        Err(e) => {
            trial.error = Some(e.to_string());
            return trial;
        }
    };
    let probe = Probe {
        background: background_hash.to_string(),
        inserted_bbox,
        label: object.label.clone(),
        center: placement.center,
    };
    let started = clock.now_ms();
    let response = detector.detect(&synthetic, Some(&probe));
    trial.latency_ms = clock.now_ms().saturating_sub(started);
    trial.synthetic = Some(synthetic);
    let result = match response {
        Ok(r) => r,
        Err(e) => {
            trial.error = Some(e.to_string());
            return trial;
        }
    };
    let (pruned, excluded) = exclude_inserted(&result, &inserted_bbox, cfg.eps_excl);
    trial.excluded = excluded;
    let (holds, map) = equality_criterion(baseline, &pruned, &cfg.metrics);
    trial.map = Some(map);
    if holds {
        trial.verdict = Verdict::Pass;
        trial.map = Some(1.0);
    } else {
        trial.verdict = Verdict::Fail;
        trial.failures = classify_failures(baseline, &pruned, &cfg.metrics).unwrap_or_default();
    }
    trial
}
