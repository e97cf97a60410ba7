use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

/// One detector prediction: a box, its category label and a confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl Detection {
    pub fn new(label: impl Into<String>, confidence: f64, bbox: BBox) -> Self {
        Self { label: label.into(), confidence, bbox }
    }

    pub fn is_valid(&self) -> bool {
        !self.label.is_empty() && (0.0..=1.0).contains(&self.confidence) && self.bbox.is_valid()
    }
}

/// The full prediction output of a detector for one image.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionSet {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(image_id: impl Into<String>, detections: Vec<Detection>) -> Self {
        Self { image_id: image_id.into(), detections }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn boxes(&self) -> impl Iterator<Item = &BBox> {
        self.detections.iter().map(|d| &d.bbox)
    }

    /// Distinct labels in sorted order.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.detections.iter().map(|d| d.label.clone()).collect();
        labels.sort();
        labels.dedup();
        labels
    }
}
