//! Per-category pool of extracted instances: pruning, average-hash similarity
//! selection, size normalization and the on-disk layout
//! `pool/<label>/<id>.png` + `pool/<label>/<id>.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::extraction::ObjectInstance;
use crate::geometry::BBox;
use crate::image::{ImageBuffer, ImageError};

const THUMB: usize = 8;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("no instances for category {0:?}")]
    MissingCategory(String),
    #[error("keep fraction must lie in (0, 1], got {0}")]
    InvalidKeepFraction(f64),
    #[error("pool i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("pool metadata {path}: {source}")]
    Metadata { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// 64-bit average hash; bit `63 - (row * 8 + col)` belongs to thumbnail cell
/// `(col, row)`, so the hex form reads the thumbnail row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PerceptualHash(pub u64);

impl PerceptualHash {
    pub fn hamming(&self, other: &PerceptualHash) -> u32 {
        (self.0 ^ other.0).count_ones()
    }

    pub fn to_hex(&self) -> String {
        format!("{:016x}", self.0)
    }
}

impl fmt::Display for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for PerceptualHash {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u64::from_str_radix(s, 16).map(PerceptualHash)
    }
}

impl Serialize for PerceptualHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PerceptualHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 16 {
            return Err(serde::de::Error::custom(format!("expected 16 hex chars, got {s:?}")));
        }
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-pixel coverage of the 8 thumbnail cells along one axis of length `n`.
fn axis_coverage(n: u32) -> Vec<Vec<(usize, f64)>> {
    let scale = THUMB as f64 / n as f64;
    (0..n)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = ((hi.ceil() as usize).max(first + 1)).min(THUMB);
            (first..last)
                .filter_map(|c| {
                    let w = hi.min(c as f64 + 1.0) - lo.max(c as f64);
                    (w > 0.0).then_some((c, w))
                })
                .collect()
        })
        .collect()
}

/// Rec.601 luma of the image composited over black, box-filtered to 8x8.
pub fn luma_thumbnail(image: &ImageBuffer) -> [f64; THUMB * THUMB] {
    let (w, h) = image.dims();
    let cov_x = axis_coverage(w);
    let cov_y = axis_coverage(h);
    let mut sum = [0.0; THUMB * THUMB];
    let mut weight = [0.0; THUMB * THUMB];
    for y in 0..h {
        for x in 0..w {
            let [r, g, b, a] = image.get(x, y);
            let alpha = a as f64 / 255.0;
            let luma = alpha * (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64);
            for &(cy, wy) in &cov_y[y as usize] {
                for &(cx, wx) in &cov_x[x as usize] {
                    let k = cy * THUMB + cx;
                    sum[k] += wx * wy * luma;
                    weight[k] += wx * wy;
                }
            }
        }
    }
    let mut out = [0.0; THUMB * THUMB];
    for k in 0..out.len() {
        out[k] = if weight[k] > 0.0 { sum[k] / weight[k] } else { 0.0 };
    }
    out
}

/// Sets a bit for every cell at or above the thumbnail mean. The comparison
/// allows 1e-9 of float noise so constant thumbnails hash to all ones.
pub fn threshold_thumbnail(thumb: &[f64; THUMB * THUMB]) -> PerceptualHash {
    let mean = thumb.iter().sum::<f64>() / thumb.len() as f64;
    let mut bits = 0u64;
    for (k, v) in thumb.iter().enumerate() {
        if *v >= mean - 1e-9 {
            bits |= 1u64 << (63 - k);
        }
    }
    PerceptualHash(bits)
}

pub fn ahash(image: &ImageBuffer) -> PerceptualHash {
    threshold_thumbnail(&luma_thumbnail(image))
}

/// Hash of the cell-wise mean thumbnail of several same-category crops.
pub fn reference_hash<'a>(
    category: &str,
    crops: impl IntoIterator<Item = &'a ImageBuffer>,
) -> Result<PerceptualHash, PoolError> {
    let mut acc = [0.0; THUMB * THUMB];
    let mut n = 0usize;
    for crop in crops {
        for (a, v) in acc.iter_mut().zip(luma_thumbnail(crop)) {
            *a += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(PoolError::MissingCategory(category.to_string()));
    }
    for a in acc.iter_mut() {
        *a /= n as f64;
    }
    Ok(threshold_thumbnail(&acc))
}

fn size_order(a: &ObjectInstance, b: &ObjectInstance) -> std::cmp::Ordering {
    b.mask_pixel_count.cmp(&a.mask_pixel_count).then_with(|| a.id.cmp(&b.id))
}

/// Instances grouped by label, each group sorted by opaque-pixel count
/// (largest first, ties by id).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectPool {
    categories: BTreeMap<String, Vec<ObjectInstance>>,
}

impl ObjectPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_instances(instances: impl IntoIterator<Item = ObjectInstance>) -> Self {
        let mut pool = Self::new();
        for inst in instances {
            pool.categories.entry(inst.label.clone()).or_default().push(inst);
        }
        for group in pool.categories.values_mut() {
            group.sort_by(size_order);
            group.dedup_by(|a, b| a.id == b.id);
        }
        pool
    }

    pub fn insert(&mut self, instance: ObjectInstance) {
        let group = self.categories.entry(instance.label.clone()).or_default();
        if group.iter().any(|i| i.id == instance.id) {
            return;
        }
        let at = group.partition_point(|i| size_order(i, &instance).is_lt());
        group.insert(at, instance);
    }

    pub fn categories(&self) -> impl Iterator<Item = (&str, &[ObjectInstance])> {
        self.categories.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn category(&self, label: &str) -> Option<&[ObjectInstance]> {
        self.categories.get(label).map(Vec::as_slice)
    }

    pub fn get(&self, label: &str, id: &str) -> Option<&ObjectInstance> {
        self.category(label)?.iter().find(|i| i.id == id)
    }

    pub fn len(&self) -> usize {
        self.categories.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keeps the `ceil(keep_fraction * n)` largest instances of each
    /// category, at least one.
    pub fn prune(&self, keep_fraction: f64) -> Result<ObjectPool, PoolError> {
        if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
            return Err(PoolError::InvalidKeepFraction(keep_fraction));
        }
        let categories = self
            .categories
            .iter()
            .map(|(label, group)| {
                let keep = keep_count(group.len(), keep_fraction);
                (label.clone(), group[..keep].to_vec())
            })
            .collect();
        Ok(ObjectPool { categories })
    }

    /// The instance closest in Hamming distance to `reference`; ties go to
    /// the larger mask, then the smaller id.
    pub fn select_similar(
        &self,
        category: &str,
        reference: &PerceptualHash,
    ) -> Result<&ObjectInstance, PoolError> {
        self.category(category)
            .and_then(|group| {
                group.iter().min_by(|a, b| {
                    a.ahash
                        .hamming(reference)
                        .cmp(&b.ahash.hamming(reference))
                        .then_with(|| size_order(a, b))
                })
            })
            .ok_or_else(|| PoolError::MissingCategory(category.to_string()))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), PoolError> {
        for group in self.categories.values() {
            for inst in group {
                save_instance(dir.as_ref(), inst)?;
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<ObjectPool, PoolError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| PoolError::Io { path, source }
        };
        let mut instances = Vec::new();
        let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io(dir))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for sub in subdirs {
            let mut metas: Vec<PathBuf> = std::fs::read_dir(&sub)
                .map_err(io(&sub))?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .collect();
            metas.sort();
            for meta_path in metas {
                let text = std::fs::read_to_string(&meta_path).map_err(io(&meta_path))?;
                let meta: InstanceMetadata = serde_json::from_str(&text)
                    .map_err(|source| PoolError::Metadata { path: meta_path.clone(), source })?;
                let image = ImageBuffer::open(meta_path.with_extension("png"))?;
                instances.push(meta.into_instance(image));
            }
        }
        Ok(ObjectPool::from_instances(instances))
    }

    /// Removes the on-disk files of instances absent from `kept`.
    pub fn remove_discarded(&self, kept: &ObjectPool, dir: impl AsRef<Path>) -> Result<usize, PoolError> {
        let mut removed = 0;
        for (label, group) in &self.categories {
            for inst in group {
                if kept.get(label, &inst.id).is_none() {
                    let base = instance_path(dir.as_ref(), inst);
                    for ext in ["png", "json"] {
                        let p = base.with_extension(ext);
                        std::fs::remove_file(&p).map_err(|source| PoolError::Io { path: p.clone(), source })?;
                    }
                    removed += 1;
                }
            }
        }
        Ok(removed)
    }
}

pub fn keep_count(n: usize, keep_fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    // the small slack keeps exact products such as 0.7 * 10 from rounding up
    let k = (keep_fraction * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n)
}

/// Metadata sidecar written next to each pool PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetadata {
    pub id: String,
    pub label: String,
    pub source_image: String,
    pub source_bbox: [f64; 4],
    pub mask_pixels: usize,
    pub ahash: PerceptualHash,
}

impl InstanceMetadata {
    pub fn of(inst: &ObjectInstance) -> Self {
        let b = inst.source_bbox;
        Self {
            id: inst.id.clone(),
            label: inst.label.clone(),
            source_image: inst.source_image.clone(),
            source_bbox: [b.x, b.y, b.w, b.h],
            mask_pixels: inst.mask_pixel_count,
            ahash: inst.ahash,
        }
    }

    fn into_instance(self, image: ImageBuffer) -> ObjectInstance {
        let [x, y, w, h] = self.source_bbox;
        ObjectInstance {
            id: self.id,
            label: self.label,
            image,
            mask_pixel_count: self.mask_pixels,
            source_image: self.source_image,
            source_bbox: BBox { x, y, w, h },
            ahash: self.ahash,
        }
    }
}

/// Directory name for a label; path separators are replaced.
pub fn label_dir(label: &str) -> String {
    label.replace(['/', '\\'], "_")
}

fn instance_path(dir: &Path, inst: &ObjectInstance) -> PathBuf {
    dir.join(label_dir(&inst.label)).join(&inst.id)
}

pub fn save_instance(dir: &Path, inst: &ObjectInstance) -> Result<(), PoolError> {
    let base = instance_path(dir, inst);
    let parent = base.parent().expect("instance path has a parent");
    std::fs::create_dir_all(parent).map_err(|source| PoolError::Io { path: parent.into(), source })?;
    inst.image.save_png(base.with_extension("png"))?;
    let meta = serde_json::to_string_pretty(&InstanceMetadata::of(inst)).expect("metadata serializes");
    let path = base.with_extension("json");
    std::fs::write(&path, meta).map_err(|source| PoolError::Io { path, source })
}

/// Scale that brings the instance to the mean area of `category_boxes`,
/// limited so the result fits inside 90% of each image dimension.
pub fn category_scale(instance: &ObjectInstance, category_boxes: &[BBox], image_dims: (u32, u32)) -> f64 {
    let (w, h) = (instance.width() as f64, instance.height() as f64);
    if category_boxes.is_empty() {
        return 1.0;
    }
    let target = category_boxes.iter().map(BBox::area).sum::<f64>() / category_boxes.len() as f64;
    let s = (target / (w * h)).sqrt();
    let limit = (0.9 * image_dims.0 as f64 / w).min(0.9 * image_dims.1 as f64 / h);
    s.min(limit)
}

pub fn resize_to_category(
    instance: &ObjectInstance,
    category_boxes: &[BBox],
    image_dims: (u32, u32),
) -> ObjectInstance {
    let s = category_scale(instance, category_boxes, image_dims);
    resize_by_scale(instance, s, Some(image_dims))
}

/// Output dimensions for a uniform scale, at least one pixel, never above
/// 90% of the image when `image_dims` is given.
pub fn scaled_dims(w: u32, h: u32, scale: f64, image_dims: Option<(u32, u32)>) -> (u32, u32) {
    let mut nw = ((w as f64 * scale).round() as u32).max(1);
    let mut nh = ((h as f64 * scale).round() as u32).max(1);
    if let Some((iw, ih)) = image_dims {
        nw = nw.min(((0.9 * iw as f64).floor() as u32).max(1));
        nh = nh.min(((0.9 * ih as f64).floor() as u32).max(1));
    }
    (nw, nh)
}

/// Bilinear resampling of color and alpha; alpha is re-binarized at one half.
/// No other transformation is applied.
pub fn resize_by_scale(instance: &ObjectInstance, scale: f64, image_dims: Option<(u32, u32)>) -> ObjectInstance {
    let (w, h) = instance.image.dims();
    let (nw, nh) = scaled_dims(w, h, scale, image_dims);
    if (nw, nh) == (w, h) {
        return instance.clone();
    }
    let src = &instance.image;
    let sx = w as f64 / nw as f64;
    let sy = h as f64 / nh as f64;
    let sample = |dx: u32, dy: u32| -> [f64; 4] {
        let fx = ((dx as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let fy = ((dy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let (p00, p10, p01, p11) = (src.get(x0, y0), src.get(x1, y0), src.get(x0, y1), src.get(x1, y1));
        let mut out = [0.0; 4];
        for c in 0..4 {
            let top = p00[c] as f64 * (1.0 - tx) + p10[c] as f64 * tx;
            let bottom = p01[c] as f64 * (1.0 - tx) + p11[c] as f64 * tx;
            out[c] = top * (1.0 - ty) + bottom * ty;
        }
        out
    };
    let mut image = ImageBuffer::from_fn(nw, nh, |dx, dy| {
        let v = sample(dx, dy);
        let alpha = if v[3] / 255.0 >= 0.5 { 255 } else { 0 };
        [v[0].round() as u8, v[1].round() as u8, v[2].round() as u8, alpha]
    });
    let mut count = image.pixels().chunks_exact(4).filter(|p| p[3] == 255).count();
    if count == 0 {
        // thin masks can vanish under bilinear averaging; fall back to the
        // nearest source sample for alpha
        for dy in 0..nh {
            for dx in 0..nw {
                let x = (((dx as f64 + 0.5) * sx) as u32).min(w - 1);
                let y = (((dy as f64 + 0.5) * sy) as u32).min(h - 1);
                if src.get(x, y)[3] == 255 {
                    let mut px = image.get(dx, dy);
                    px[3] = 255;
                    image.put(dx, dy, px);
                    count += 1;
                }
            }
        }
        if count == 0 {
            let mut px = image.get(nw / 2, nh / 2);
            px[3] = 255;
            image.put(nw / 2, nh / 2, px);
            count = 1;
        }
    }
    ObjectInstance { image, mask_pixel_count: count, ..instance.clone() }
}
