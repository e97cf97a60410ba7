//! The black-box detector abstraction the oracle queries.

use thiserror::Error;

use crate::detection::DetectionSet;
use crate::geometry::{BBox, Point};
use crate::image::ImageBuffer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {message} (payload: {excerpt:?})")]
    Protocol { message: String, excerpt: String },
    #[error("rate limited after {retries} retries")]
    RateLimited { retries: u32 },
    #[error("unknown background image {0}")]
    UnknownBackground(String),
    #[error("cannot encode image: {0}")]
    Encode(String),
}

/// Describes the synthetic image being queried.
///
/// Remote endpoints never see it. Scripted mock detectors use it to decide
/// their answer without re-deriving the placement from pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    /// Content hash of the background the synthetic image was built from.
    pub background: String,
    pub inserted_bbox: BBox,
    pub label: String,
    pub center: Point,
}

pub trait Detector: Send + Sync {
    fn id(&self) -> &str;

    fn detect(&self, image: &ImageBuffer, probe: Option<&Probe>) -> Result<DetectionSet, DetectError>;
}

impl<D: Detector + ?Sized> Detector for &D {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn detect(&self, image: &ImageBuffer, probe: Option<&Probe>) -> Result<DetectionSet, DetectError> {
        (**self).detect(image, probe)
    }
}

impl<D: Detector + ?Sized> Detector for Box<D> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn detect(&self, image: &ImageBuffer, probe: Option<&Probe>) -> Result<DetectionSet, DetectError> {
        (**self).detect(image, probe)
    }
}

impl<D: Detector + ?Sized> Detector for std::sync::Arc<D> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn detect(&self, image: &ImageBuffer, probe: Option<&Probe>) -> Result<DetectionSet, DetectError> {
        (**self).detect(image, probe)
    }
}
