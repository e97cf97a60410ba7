//! Placement sampling, compositing and bisection relocation.
//!
//! A placed object occupies the integer-aligned box whose top-left corner is
//! `round(center - size / 2)`. The samplers snap their centers so that this
//! box is centered exactly on the stored point.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::DetectionSet;
use crate::extraction::ObjectInstance;
use crate::geometry::{BBox, Point};
use crate::image::ImageBuffer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InsertionError {
    #[error("baseline has no detections")]
    EmptyBaseline,
    #[error("object {w}x{h} does not fit in a {width}x{height} image")]
    ObjectTooLarge { w: u32, h: u32, width: u32, height: u32 },
    #[error("no valid placement after {0} attempts")]
    PlacementExhausted(usize),
    #[error("placed box {0:?} leaves the image")]
    OutOfBounds(BBox),
    #[error("relocation must start from a failing placement")]
    StartNotFailing,
    #[error("anchor index {0} is not a baseline detection")]
    NoSuchAnchor(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Guided,
    Random,
    Relocated,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Guided => "guided",
            Mode::Random => "random",
            Mode::Relocated => "relocated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub center: Point,
    /// Pixel size of the (already resized) object.
    pub size: [u32; 2],
    pub scale: f64,
    pub object_id: String,
    pub anchor_index: Option<usize>,
    pub mode: Mode,
}

impl Placement {
    pub fn new(center: Point, object: &ObjectInstance, mode: Mode) -> Self {
        Self {
            center,
            size: [object.width(), object.height()],
            scale: 1.0,
            object_id: object.id.clone(),
            anchor_index: None,
            mode,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// Integer-aligned box the object covers.
    pub fn bbox(&self) -> BBox {
        let (w, h) = (self.size[0] as f64, self.size[1] as f64);
        BBox {
            x: (self.center.x - w / 2.0).round(),
            y: (self.center.y - h / 2.0).round(),
            w,
            h,
        }
    }

    /// Copy of this placement moved to `center`, as produced by relocation.
    pub fn moved_to(&self, center: Point) -> Placement {
        Placement { center, mode: Mode::Relocated, ..self.clone() }
    }

    pub fn is_valid(&self, baseline: &DetectionSet, image_dims: (u32, u32)) -> bool {
        let b = self.bbox();
        image_rect(image_dims).contains_box(&b) && !baseline.boxes().any(|d| d.overlaps(&b))
    }
}

fn image_rect((w, h): (u32, u32)) -> BBox {
    BBox { x: 0.0, y: 0.0, w: w as f64, h: h as f64 }
}

/// Moves a center so the object's box lands on whole pixels.
fn snap(center: Point, w: u32, h: u32) -> Point {
    let (w, h) = (w as f64, h as f64);
    Point::new((center.x - w / 2.0).round() + w / 2.0, (center.y - h / 2.0).round() + h / 2.0)
}

pub fn centroid(baseline: &DetectionSet) -> Result<Point, InsertionError> {
    if baseline.is_empty() {
        return Err(InsertionError::EmptyBaseline);
    }
    let n = baseline.len() as f64;
    let (sx, sy) = baseline.boxes().map(BBox::center).fold((0.0, 0.0), |(sx, sy), c| (sx + c.x, sy + c.y));
    Ok(Point::new(sx / n, sy / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Outer guided frame extent beyond the anchor, in object dimensions.
    pub k: f64,
    pub max_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { k: 2.0, max_attempts: 100 }
    }
}

/// Closed axis-aligned rectangle; may be degenerate.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn of(b: &BBox) -> Self {
        Rect { x0: b.x, y0: b.y, x1: b.right(), y1: b.bottom() }
    }

    fn intersect(&self, o: &Rect) -> Option<Rect> {
        let r = Rect { x0: self.x0.max(o.x0), y0: self.y0.max(o.y0), x1: self.x1.min(o.x1), y1: self.y1.min(o.y1) };
        (r.x1 >= r.x0 && r.y1 >= r.y0).then_some(r)
    }

    fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    fn sample(&self, rng: &mut impl Rng) -> Point {
        Point::new(
            self.x0 + (self.x1 - self.x0) * rng.random::<f64>(),
            self.y0 + (self.y1 - self.y0) * rng.random::<f64>(),
        )
    }

    /// `self` minus the interior of `hole`, as up to four disjoint pieces.
    fn subtract(&self, hole: &Rect) -> Vec<Rect> {
        let Some(h) = self.intersect(hole) else {
            return vec![*self];
        };
        let pieces = [
            Rect { y1: h.y0, ..*self },
            Rect { y0: h.y1, ..*self },
            Rect { x1: h.x0, y0: h.y0, y1: h.y1, ..*self },
            Rect { x0: h.x1, y0: h.y0, y1: h.y1, ..*self },
        ];
        pieces.into_iter().filter(|r| r.area() > 0.0).collect()
    }
}

/// Frame around an anchor from which guided centers are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidedRegion {
    pub outer: BBox,
    /// Centers strictly inside this box would make the object overlap the anchor.
    pub inner_exclusion: BBox,
}

impl GuidedRegion {
    pub fn new(anchor: &BBox, object_w: u32, object_h: u32, k: f64) -> Self {
        let (ow, oh) = (object_w as f64, object_h as f64);
        Self { outer: anchor.expand(k * ow, k * oh), inner_exclusion: anchor.expand(ow / 2.0, oh / 2.0) }
    }

    /// Sampling domain: outer frame, minus the exclusion, within `band`.
    fn pieces(&self, band: &Rect) -> Vec<Rect> {
        match Rect::of(&self.outer).intersect(band) {
            Some(r) => r.subtract(&Rect::of(&self.inner_exclusion)),
            None => Vec::new(),
        }
    }
}

/// Range of centers that keep the object inside the image.
fn center_band(object: &ObjectInstance, (width, height): (u32, u32)) -> Result<Rect, InsertionError> {
    let (w, h) = (object.width(), object.height());
    if w > width || h > height {
        return Err(InsertionError::ObjectTooLarge { w, h, width, height });
    }
    let (hw, hh) = (w as f64 / 2.0, h as f64 / 2.0);
    Ok(Rect { x0: hw, y0: hh, x1: width as f64 - hw, y1: height as f64 - hh })
}

pub fn sample_guided(
    baseline: &DetectionSet,
    object: &ObjectInstance,
    image_dims: (u32, u32),
    rng: &mut impl Rng,
    cfg: &SamplerConfig,
) -> Result<Placement, InsertionError> {
    sample_guided_from(baseline, object, image_dims, rng, cfg, None)
}

/// Guided sampling whose first attempt uses `first_anchor` when given; every
/// later attempt draws a fresh anchor.
pub fn sample_guided_from(
    baseline: &DetectionSet,
    object: &ObjectInstance,
    image_dims: (u32, u32),
    rng: &mut impl Rng,
    cfg: &SamplerConfig,
    first_anchor: Option<usize>,
) -> Result<Placement, InsertionError> {
    if baseline.is_empty() {
        return Err(InsertionError::EmptyBaseline);
    }
    if let Some(a) = first_anchor.filter(|a| *a >= baseline.len()) {
        return Err(InsertionError::NoSuchAnchor(a));
    }
    let band = center_band(object, image_dims)?;
    let (ow, oh) = (object.width(), object.height());
    for attempt in 0..cfg.max_attempts {
        let anchor = match first_anchor {
            Some(a) if attempt == 0 => a,
            _ => rng.random_range(0..baseline.len()),
        };
        let region = GuidedRegion::new(&baseline.detections[anchor].bbox, ow, oh, cfg.k);
        let pieces = region.pieces(&band);
        let total: f64 = pieces.iter().map(Rect::area).sum();
        if total <= 0.0 {
            continue;
        }
        let mut pick = rng.random::<f64>() * total;
        let piece = pieces
            .iter()
            .find(|p| {
                pick -= p.area();
                pick < 0.0
            })
            .unwrap_or(pieces.last().expect("non-empty"));
        let center = snap(piece.sample(rng), ow, oh);
        let placement = Placement { anchor_index: Some(anchor), ..Placement::new(center, object, Mode::Guided) };
        if placement.is_valid(baseline, image_dims) {
            return Ok(placement);
        }
    }
    Err(InsertionError::PlacementExhausted(cfg.max_attempts))
}

pub fn sample_random(
    baseline: &DetectionSet,
    object: &ObjectInstance,
    image_dims: (u32, u32),
    rng: &mut impl Rng,
    cfg: &SamplerConfig,
) -> Result<Placement, InsertionError> {
    let band = center_band(object, image_dims)?;
    for _ in 0..cfg.max_attempts {
        let center = snap(band.sample(rng), object.width(), object.height());
        let placement = Placement::new(center, object, Mode::Random);
        if placement.is_valid(baseline, image_dims) {
            return Ok(placement);
        }
    }
    Err(InsertionError::PlacementExhausted(cfg.max_attempts))
}

/// Pastes the opaque pixels of `object` at `placement`; everything else keeps
/// the background bytes.
pub fn composite(
    background: &ImageBuffer,
    object: &ObjectInstance,
    placement: &Placement,
) -> Result<ImageBuffer, InsertionError> {
    let b = placement.bbox();
    if !image_rect(background.dims()).contains_box(&b) || [object.width(), object.height()] != placement.size {
        return Err(InsertionError::OutOfBounds(b));
    }
    let (x0, y0) = (b.x as u32, b.y as u32);
    let mut out = background.clone();
    for y in 0..object.height() {
        for x in 0..object.width() {
            let px = object.image.get(x, y);
            if px[3] == 255 {
                out.put(x0 + x, y0 + y, px);
            }
        }
    }
    Ok(out)
}

/// Answer of the relocation oracle for one probe position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeVerdict {
    Fail,
    Pass,
    /// Placement overlaps a baseline box or leaves the image.
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelocationOutcome {
    pub background: String,
    pub object_id: String,
    pub start: Point,
    pub target: Point,
    pub frontier_t: f64,
    /// Every probed position that failed, in probe order.
    pub failing_positions: Vec<Point>,
    pub queries_used: usize,
}

/// `max(0.01, 2 px / segment length)`.
pub fn default_delta(segment_length: f64) -> f64 {
    if segment_length > 0.0 {
        (2.0 / segment_length).max(0.01)
    } else {
        1.0
    }
}

/// Maximum number of oracle queries a search with step `delta` may issue.
pub fn query_bound(delta: f64) -> usize {
    (1.0 / delta).log2().ceil().max(0.0) as usize + 1
}

/// Bisection from a failing placement toward `target`.
///
/// The start is known to fail and is not re-queried. The target itself is
/// probed first; afterwards each probe halves the gap between the largest
/// failing `t` and the smallest non-failing one until it is at most `delta`.
pub fn relocate(
    background: &str,
    start: &Placement,
    start_verdict: ProbeVerdict,
    target: Point,
    delta: f64,
    mut oracle: impl FnMut(&Placement) -> ProbeVerdict,
) -> Result<RelocationOutcome, InsertionError> {
    if start_verdict != ProbeVerdict::Fail {
        return Err(InsertionError::StartNotFailing);
    }
    let origin = start.center;
    let mut outcome = RelocationOutcome {
        background: background.to_string(),
        object_id: start.object_id.clone(),
        start: origin,
        target,
        frontier_t: 0.0,
        failing_positions: Vec::new(),
        queries_used: 0,
    };
    if origin.distance(&target) <= f64::EPSILON {
        return Ok(outcome);
    }
    let delta = delta.clamp(f64::MIN_POSITIVE, 1.0);
    let mut f = 0.0;
    let mut hi: Option<f64> = None;
    let mut t = 1.0;
    loop {
        let position = origin.lerp(&target, t);
        outcome.queries_used += 1;
        if oracle(&start.moved_to(position)) == ProbeVerdict::Fail {
            f = t;
            outcome.failing_positions.push(position);
        } else {
            hi = Some(t);
        }
        match hi {
            None => break,
            Some(h) if h - f <= delta => break,
            Some(h) => t = (f + h) / 2.0,
        }
    }
    outcome.frontier_t = f;
    Ok(outcome)
}

/// Number of distinct failing synthetic images across searches, keyed by
/// background, object and center rounded to whole pixels.
pub fn dedup_positions<'a>(outcomes: impl IntoIterator<Item = &'a RelocationOutcome>) -> usize {
    let mut seen = HashSet::new();
    for o in outcomes {
        for p in &o.failing_positions {
            seen.insert((o.background.as_str(), o.object_id.as_str(), p.x.round() as i64, p.y.round() as i64));
        }
    }
    seen.len()
}
