//! Core of a metamorphic-testing harness for black-box object detectors.
//!
//! A background image is queried once to obtain its baseline detections. An
//! object instance taken from a pool is then composited onto the background
//! where it overlaps none of those detections, and the detector is queried on
//! the synthetic image. After the inserted object's own prediction is removed,
//! the remaining detections must reproduce the baseline with an mAP of 1.

pub mod clock;
pub mod detection;
pub mod detector;
pub mod extraction;
pub mod geometry;
pub mod image;
pub mod insertion;
pub mod metrics;
pub mod naturalness;
pub mod oracle;
pub mod pool;

pub use detection::{Detection, DetectionSet};
pub use detector::{DetectError, Detector, Probe};
pub use geometry::{BBox, Point};
pub use image::ImageBuffer;
pub use metrics::MetricsConfig;
