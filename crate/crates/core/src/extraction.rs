//! Object instances cut out of annotated images.
//!
//! Instance masks arrive as polygons (one or several parts) or as uncompressed
//! column-major run-length encodings. A pixel belongs to a polygon when its
//! center is inside under the even-odd rule; parts of one instance are merged.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::image::ImageBuffer;
use crate::pool::{ahash, PerceptualHash};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractionError {
    #[error("degenerate annotation: {0}")]
    Degenerate(String),
    #[error("annotation out of image bounds: {0}")]
    OutOfBounds(String),
    #[error("malformed run-length mask: {0}")]
    MalformedRle(String),
}

/// A polygon vertex `[x, y]` in image coordinates.
pub type Vertex = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub enum MaskShape {
    Polygons(Vec<Vec<Vertex>>),
    /// `size` is `[height, width]`; `counts` alternate background and
    /// foreground runs in column-major order, starting with background.
    Rle { size: [u32; 2], counts: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAnnotation {
    pub image_file: PathBuf,
    pub label: String,
    pub shape: MaskShape,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    fn set(&mut self, x: u32, y: u32) {
        self.bits[y as usize * self.width as usize + x as usize] = true;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Inclusive pixel bounds `(x0, y0, x1, y1)` of the foreground.
    pub fn bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let mut bounds: Option<(u32, u32, u32, u32)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bounds = Some(match bounds {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bounds
    }

    fn union_with(&mut self, other: &Mask) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }
}

/// Fills one polygon with the even-odd rule, sampling at pixel centers.
/// Vertices are clamped into `[0, width] x [0, height]`.
pub fn rasterize_polygon(polygon: &[Vertex], width: u32, height: u32) -> Result<Mask, ExtractionError> {
    if polygon.len() < 3 {
        return Err(ExtractionError::Degenerate(format!(
            "polygon needs at least 3 vertices, got {}",
            polygon.len()
        )));
    }
    let pts: Vec<Vertex> = polygon
        .iter()
        .map(|[x, y]| [x.clamp(0.0, width as f64), y.clamp(0.0, height as f64)])
        .collect();

    let mut mask = Mask::empty(width, height);
    let mut crossings = Vec::with_capacity(pts.len());
    for py in 0..height {
        let yc = py as f64 + 0.5;
        crossings.clear();
        let mut j = pts.len() - 1;
        for i in 0..pts.len() {
            let ([xi, yi], [xj, yj]) = (pts[i], pts[j]);
            if (yi > yc) != (yj > yc) {
                crossings.push((xj - xi) * (yc - yi) / (yj - yi) + xi);
            }
            j = i;
        }
        if crossings.is_empty() {
            continue;
        }
        crossings.sort_by(f64::total_cmp);
        for px in 0..width {
            let xc = px as f64 + 0.5;
            // crossings strictly to the right of the sample point
            let right = crossings.len() - crossings.partition_point(|&c| c <= xc);
            if right % 2 == 1 {
                mask.set(px, py);
            }
        }
    }
    Ok(mask)
}

/// Decodes an uncompressed COCO-style run-length mask.
pub fn decode_rle(size: [u32; 2], counts: &[u32], width: u32, height: u32) -> Result<Mask, ExtractionError> {
    let [h, w] = size;
    if h != height || w != width {
        return Err(ExtractionError::OutOfBounds(format!(
            "mask is {w}x{h} but image is {width}x{height}"
        )));
    }
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total != h as u64 * w as u64 {
        return Err(ExtractionError::MalformedRle(format!(
            "runs cover {total} pixels, mask has {}",
            h as u64 * w as u64
        )));
    }
    let mut mask = Mask::empty(width, height);
    let mut pos = 0u64;
    for (run, &len) in counts.iter().enumerate() {
        if run % 2 == 1 {
            for i in pos..pos + len as u64 {
                let x = (i / h as u64) as u32;
                let y = (i % h as u64) as u32;
                mask.set(x, y);
            }
        }
        pos += len as u64;
    }
    Ok(mask)
}

/// Rasterizes any supported shape and checks it is usable.
pub fn shape_mask(shape: &MaskShape, width: u32, height: u32) -> Result<Mask, ExtractionError> {
    let mask = match shape {
        MaskShape::Polygons(parts) => {
            if parts.is_empty() {
                return Err(ExtractionError::Degenerate("no polygon parts".into()));
            }
            let mut merged = Mask::empty(width, height);
            for part in parts {
                let outside = part.iter().all(|[x, _]| *x < 0.0)
                    || part.iter().all(|[x, _]| *x > width as f64)
                    || part.iter().all(|[_, y]| *y < 0.0)
                    || part.iter().all(|[_, y]| *y > height as f64);
                if outside && part.len() >= 3 {
                    return Err(ExtractionError::OutOfBounds(format!(
                        "polygon lies outside the {width}x{height} image"
                    )));
                }
                merged.union_with(&rasterize_polygon(part, width, height)?);
            }
            merged
        }
        MaskShape::Rle { size, counts } => decode_rle(*size, counts, width, height)?,
    };
    if mask.count() == 0 {
        return Err(ExtractionError::Degenerate("mask covers no pixel centers".into()));
    }
    Ok(mask)
}

/// A cut-out object: a tight RGBA crop whose alpha channel is the binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub id: String,
    pub label: String,
    pub image: ImageBuffer,
    pub mask_pixel_count: usize,
    pub source_image: String,
    pub source_bbox: BBox,
    pub ahash: PerceptualHash,
}

impl ObjectInstance {
    /// Wraps an RGBA crop, deriving id, opaque-pixel count and hash.
    /// The alpha channel is binarized at 128.
    pub fn from_crop(
        label: impl Into<String>,
        mut image: ImageBuffer,
        source_image: impl Into<String>,
        source_bbox: BBox,
    ) -> Result<Self, ExtractionError> {
        let (w, h) = image.dims();
        let mut count = 0;
        for y in 0..h {
            for x in 0..w {
                let mut px = image.get(x, y);
                px[3] = if px[3] >= 128 { 255 } else { 0 };
                count += (px[3] == 255) as usize;
                image.put(x, y, px);
            }
        }
        if count == 0 {
            return Err(ExtractionError::Degenerate("crop has no opaque pixel".into()));
        }
        Ok(Self {
            id: image.content_hash()[..16].to_string(),
            label: label.into(),
            ahash: ahash(&image),
            mask_pixel_count: count,
            source_image: source_image.into(),
            source_bbox,
            image,
        })
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }
}

pub fn extract_instance(
    image: &ImageBuffer,
    annotation: &InstanceAnnotation,
) -> Result<ObjectInstance, ExtractionError> {
    let (width, height) = image.dims();
    let mask = shape_mask(&annotation.shape, width, height)?;
    let (x0, y0, x1, y1) = mask.bounds().expect("non-empty mask has bounds");
    let (cw, ch) = (x1 - x0 + 1, y1 - y0 + 1);
    let crop = ImageBuffer::from_fn(cw, ch, |cx, cy| {
        let [r, g, b, _] = image.get(x0 + cx, y0 + cy);
        let alpha = if mask.get(x0 + cx, y0 + cy) { 255 } else { 0 };
        [r, g, b, alpha]
    });
    let bbox = BBox::new(x0 as f64, y0 as f64, cw as f64, ch as f64)
        .map_err(|e| ExtractionError::Degenerate(e.to_string()))?;
    ObjectInstance::from_crop(annotation.label.clone(), crop, image.content_hash(), bbox)
}

/// On-disk annotation document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub images: Vec<AnnotatedImage>,
    pub instances: Vec<InstanceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub file: PathBuf,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub image: PathBuf,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<PolygonField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rle: Option<RleField>,
}

/// A single ring `[[x, y], ...]` or several rings `[[[x, y], ...], ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolygonField {
    Single(Vec<Vertex>),
    Multi(Vec<Vec<Vertex>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RleField {
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

impl InstanceRecord {
    pub fn to_annotation(&self) -> Result<InstanceAnnotation, ExtractionError> {
        let shape = match (&self.polygon, &self.rle) {
            (Some(PolygonField::Single(ring)), None) => MaskShape::Polygons(vec![ring.clone()]),
            (Some(PolygonField::Multi(rings)), None) => MaskShape::Polygons(rings.clone()),
            (None, Some(rle)) => MaskShape::Rle { size: rle.size, counts: rle.counts.clone() },
            (Some(_), Some(_)) => {
                return Err(ExtractionError::Degenerate("both polygon and rle given".into()))
            }
            (None, None) => return Err(ExtractionError::Degenerate("no polygon or rle".into())),
        };
        Ok(InstanceAnnotation { image_file: self.image.clone(), label: self.label.clone(), shape })
    }
}
