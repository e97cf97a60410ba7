//! Scripted detectors for self-testing the harness.
//!
//! A mock knows the true detections of each background (keyed by the content
//! hash of the image). For a synthetic image it reads the placement from the
//! [`Probe`] side channel, reproduces the background's detections, applies
//! its scenario and adds a detection for the inserted object.

use std::collections::BTreeMap;
use std::path::Path;

use metaod_core::{DetectError, Detection, DetectionSet, Detector, ImageBuffer, Point, Probe};
use serde::{Deserialize, Serialize};

fn default_relabel() -> String {
    "relabeled".to_string()
}

fn default_tolerance() -> f64 {
    1.0
}

fn default_confidence() -> f64 {
    0.9
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Behavior {
    /// Background detections are returned unchanged.
    Perfect,
    /// Drops detections whose center lies within `radius` of the inserted center.
    SuppressNear { radius: f64 },
    /// Renames those detections to `label`.
    RelabelNear {
        radius: f64,
        #[serde(default = "default_relabel")]
        label: String,
    },
    /// Shifts those detections by `offset`.
    DriftNear { radius: f64, offset: [f64; 2] },
    /// Drops every detection when the inserted center lies on the segment
    /// `start -> end` (within `tolerance` pixels) at a parameter `t <= t_max`.
    Corridor {
        t_max: f64,
        start: [f64; 2],
        end: [f64; 2],
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScenario {
    /// Background content hash to its detections.
    pub ground_truth: BTreeMap<String, Vec<Detection>>,
    pub behavior: Behavior,
    #[serde(default = "default_confidence")]
    pub inserted_confidence: f64,
    #[serde(default = "default_true")]
    pub detect_inserted: bool,
}

impl MockScenario {
    pub fn new(behavior: Behavior) -> Self {
        Self { ground_truth: BTreeMap::new(), behavior, inserted_confidence: 0.9, detect_inserted: true }
    }

    pub fn with_background(mut self, image: &ImageBuffer, detections: Vec<Detection>) -> Self {
        self.ground_truth.insert(image.content_hash(), detections);
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DetectError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| DetectError::Transport(format!("reading scenario {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| DetectError::Protocol {
            message: format!("scenario {}: {e}", path.display()),
            excerpt: text.chars().take(200).collect(),
        })
    }
}

/// Parameter of the projection of `p` on the segment `a -> b`, and the
/// distance from `p` to that line.
pub fn segment_parameter(p: Point, a: Point, b: Point) -> (f64, f64) {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return (0.0, p.distance(&a));
    }
    let t = ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2;
    (t, p.distance(&a.lerp(&b, t)))
}

#[derive(Debug, Clone)]
pub struct MockDetector {
    id: String,
    scenario: MockScenario,
}

pub fn mock_detector(scenario: MockScenario) -> MockDetector {
    MockDetector { id: "mock".to_string(), scenario }
}

impl MockDetector {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn scenario(&self) -> &MockScenario {
        &self.scenario
    }

    fn truth(&self, hash: &str) -> Result<&Vec<Detection>, DetectError> {
        self.scenario.ground_truth.get(hash).ok_or_else(|| DetectError::UnknownBackground(hash.to_string()))
    }

    fn respond(&self, probe: &Probe) -> Result<Vec<Detection>, DetectError> {
        let truth = self.truth(&probe.background)?;
        let near = |d: &Detection, r: f64| d.bbox.center().distance(&probe.center) <= r;
        let mut out: Vec<Detection> = match &self.scenario.behavior {
            Behavior::Perfect => truth.clone(),
            Behavior::SuppressNear { radius } => truth.iter().filter(|d| !near(d, *radius)).cloned().collect(),
            Behavior::RelabelNear { radius, label } => truth
                .iter()
                .map(|d| if near(d, *radius) { Detection { label: label.clone(), ..d.clone() } } else { d.clone() })
                .collect(),
            Behavior::DriftNear { radius, offset } => truth
                .iter()
                .map(|d| {
                    if near(d, *radius) {
                        Detection { bbox: d.bbox.translate(offset[0], offset[1]), ..d.clone() }
                    } else {
                        d.clone()
                    }
                })
                .collect(),
            Behavior::Corridor { t_max, start, end, tolerance } => {
                let (t, off) = segment_parameter(probe.center, Point::new(start[0], start[1]), Point::new(end[0], end[1]));
                if off <= *tolerance && t <= *t_max {
                    Vec::new()
                } else {
                    truth.clone()
                }
            }
        };
        if self.scenario.detect_inserted {
            out.push(Detection::new(probe.label.clone(), self.scenario.inserted_confidence, probe.inserted_bbox));
        }
        Ok(out)
    }
}

impl Detector for MockDetector {
    fn id(&self) -> &str {
        &self.id
    }

    fn detect(&self, image: &ImageBuffer, probe: Option<&Probe>) -> Result<DetectionSet, DetectError> {
        let hash = image.content_hash();
        let detections = match probe {
            None => self.truth(&hash)?.clone(),
            Some(p) => self.respond(p)?,
        };
        Ok(DetectionSet::new(hash, detections))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use metaod_core::BBox;

    fn det(label: &str, x: f64, y: f64) -> Detection {
        Detection::new(label, 0.8, BBox::new(x, y, 10., 10.).unwrap())
    }

    fn probe(bg: &ImageBuffer, cx: f64, cy: f64) -> Probe {
        Probe {
            background: bg.content_hash(),
            inserted_bbox: BBox::centered(Point::new(cx, cy), 4., 4.).unwrap(),
            label: "kite".into(),
            center: Point::new(cx, cy),
        }
    }

    fn bg() -> ImageBuffer {
        ImageBuffer::filled(64, 64, [1, 2, 3, 255])
    }

    #[test]
    fn baseline_and_perfect() {
        let truth = vec![det("car", 0., 0.), det("dog", 40., 40.)];
        let m = mock_detector(MockScenario::new(Behavior::Perfect).with_background(&bg(), truth.clone()));
        assert_eq!(m.detect(&bg(), None).unwrap().detections, truth);
        let synth = m.detect(&ImageBuffer::filled(64, 64, [0; 4]), Some(&probe(&bg(), 30., 5.))).unwrap();
        assert_eq!(&synth.detections[..2], &truth[..]);
        assert_eq!(synth.detections[2].label, "kite");
        assert!(matches!(m.detect(&ImageBuffer::filled(2, 2, [0; 4]), None), Err(DetectError::UnknownBackground(_))));
    }

    #[test]
    fn near_scenarios() {
        // centers at (5,5) and (45,45); probe at (10,5) is 5 px from the first
        let truth = vec![det("car", 0., 0.), det("dog", 40., 40.)];
        let p = probe(&bg(), 10., 5.);
        let run = |b: Behavior| mock_detector(MockScenario::new(b).with_background(&bg(), truth.clone())).detect(&bg(), Some(&p)).unwrap().detections;
        let s = run(Behavior::SuppressNear { radius: 5.0 });
        assert_eq!(s.iter().map(|d| d.label.as_str()).collect::<Vec<_>>(), ["dog", "kite"]);
        assert_eq!(run(Behavior::SuppressNear { radius: 4.9 }).len(), 3);
        let r = run(Behavior::RelabelNear { radius: 6.0, label: "truck".into() });
        assert_eq!(r[0].label, "truck");
        assert_eq!(r[1].label, "dog");
        let d = run(Behavior::DriftNear { radius: 6.0, offset: [3.0, 0.0] });
        assert_eq!(d[0].bbox, truth[0].bbox.translate(3.0, 0.0));
    }

    #[test]
    fn corridor_fails_up_to_t_max() {
        let truth = vec![det("car", 0., 0.)];
        let scenario = MockScenario::new(Behavior::Corridor { t_max: 0.6, start: [20., 20.], end: [60., 20.], tolerance: 1.0 })
            .with_background(&bg(), truth);
        let m = mock_detector(scenario);
        let count = |x: f64, y: f64| m.detect(&bg(), Some(&probe(&bg(), x, y))).unwrap().len();
        assert_eq!(count(20., 20.), 1);
        assert_eq!(count(44., 20.), 1);
        assert_eq!(count(44.5, 20.), 2);
        assert_eq!(count(30., 25.), 2);
    }

    #[test]
    fn segment_parameter_examples() {
        let (t, d) = segment_parameter(Point::new(5., 3.), Point::new(0., 0.), Point::new(10., 0.));
        assert_eq!((t, d), (0.5, 3.0));
    }

    #[test]
    fn scenario_json() {
        let json = r#"{"ground_truth":{"abc":[{"label":"car","confidence":0.5,"box":{"x":0,"y":0,"w":1,"h":1}}]},
                      "behavior":{"kind":"drift-near","radius":10,"offset":[5,0]}}"#;
        let s: MockScenario = serde_json::from_str(json).unwrap();
        assert_eq!(s.behavior, Behavior::DriftNear { radius: 10.0, offset: [5.0, 0.0] });
        assert_eq!(s.inserted_confidence, 0.9);
        assert!(s.detect_inserted);
    }
}
