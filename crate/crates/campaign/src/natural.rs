//! Naturalness scores recomputed from a finished campaign's trials.

use std::collections::HashMap;
use std::path::Path;

use log::warn;
use metaod_core::extraction::ObjectInstance;
use metaod_core::insertion::{composite, Mode, Placement};
use metaod_core::naturalness::{hog, hog_intersection, HogDescriptor};
use metaod_core::oracle::{TrialRecord, Verdict};
use metaod_core::pool::{resize_by_scale, ObjectPool};
use metaod_core::{ImageBuffer, Point};
use serde::Serialize;

use crate::report::NaturalnessSummary;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NaturalnessReport {
    #[serde(flatten)]
    pub summary: NaturalnessSummary,
    /// Non-skipped trials whose synthetic image could not be rebuilt.
    pub unavailable: usize,
}

/// Loads every readable image under `dir`, keyed by content hash.
pub fn index_backgrounds(dir: &Path) -> std::io::Result<HashMap<String, ImageBuffer>> {
    let mut out = HashMap::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        if let Ok(img) = ImageBuffer::open(entry.path()) {
            out.insert(img.content_hash(), img);
        }
    }
    Ok(out)
}

/// Rebuilds the synthetic image of `record` from its background and the pool.
pub fn recomposite(record: &TrialRecord, background: &ImageBuffer, pool: &ObjectPool) -> Option<ImageBuffer> {
    let original: &ObjectInstance = pool.get(&record.category, &record.object_id)?;
    let object = resize_by_scale(original, record.scale, Some(background.dims()));
    let center = Point::new(record.center[0], record.center[1]);
    let placement = Placement { anchor_index: record.anchor_index, ..Placement::new(center, &object, record.mode) }
        .with_scale(record.scale);
    composite(background, &object, &placement).ok()
}

/// Mean HOG intersection of synthetic images with their backgrounds, split
/// into planned insertions and relocation probes. Synthetic images are read
/// from `images_dir/<id>.png` when present and rebuilt from `pool` otherwise.
pub fn score_trials(
    records: &[TrialRecord],
    backgrounds: &HashMap<String, ImageBuffer>,
    images_dir: Option<&Path>,
    pool: Option<&ObjectPool>,
) -> NaturalnessReport {
    let mut hogs: HashMap<&str, Option<HogDescriptor>> = HashMap::new();
    let (mut inserted, mut relocated, mut unavailable) = (Vec::new(), Vec::new(), 0);
    for r in records.iter().filter(|r| r.verdict != Verdict::Skipped) {
        let Some(bg) = backgrounds.get(&r.background) else {
            unavailable += 1;
            continue;
        };
        let saved = images_dir.map(|d| d.join(format!("{}.png", r.id))).filter(|p| p.exists());
        let synthetic = match saved {
            Some(p) => ImageBuffer::open(&p).ok(),
            None => pool.and_then(|pool| recomposite(r, bg, pool)),
        };
        let bg_hog = hogs.entry(r.background.as_str()).or_insert_with(|| hog(bg).ok());
        let score = match (bg_hog, synthetic) {
            (Some(b), Some(s)) => hog(&s).and_then(|h| hog_intersection(b, &h)).ok(),
            _ => None,
        };
        match (score, r.mode) {
            (Some(v), Mode::Relocated) => relocated.push(v),
            (Some(v), _) => inserted.push(v),
            (None, _) => {
                warn!("no synthetic image for trial {}", r.id);
                unavailable += 1;
            }
        }
    }
    NaturalnessReport { summary: NaturalnessSummary::from_scores(&inserted, &relocated), unavailable }
}
