use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::warn;
use metaod_core::extraction::{extract_instance, AnnotationFile};
use metaod_core::pool::save_instance;
use metaod_core::ImageBuffer;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read annotations {path}: {message}")]
    Annotations { path: PathBuf, message: String },
    #[error(transparent)]
    Pool(#[from] metaod_core::pool::PoolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct IngestSummary {
    pub extracted: usize,
    pub skipped: usize,
}

/// Cuts every annotated instance out of its image and stores it in the pool
/// directory. Instances whose image is missing, whose size disagrees with
/// the annotation, or whose mask is empty are skipped with a warning.
pub fn extract_pool(images: &Path, annotations: &Path, pool_dir: &Path) -> Result<IngestSummary, IngestError> {
    let text = std::fs::read_to_string(annotations)
        .map_err(|e| IngestError::Annotations { path: annotations.into(), message: e.to_string() })?;
    let doc: AnnotationFile = serde_json::from_str(&text)
        .map_err(|e| IngestError::Annotations { path: annotations.into(), message: e.to_string() })?;
    let declared: HashMap<&Path, (u32, u32)> =
        doc.images.iter().map(|i| (i.file.as_path(), (i.width, i.height))).collect();

    let mut loaded: HashMap<&Path, Option<ImageBuffer>> = HashMap::new();
    let mut summary = IngestSummary::default();
    for record in &doc.instances {
        let image = loaded.entry(record.image.as_path()).or_insert_with(|| {
            let img = ImageBuffer::open(images.join(&record.image))
                .map_err(|e| warn!("{}: {e}", record.image.display()))
                .ok()?;
            match declared.get(record.image.as_path()) {
                Some(&dims) if dims != img.dims() => {
                    warn!("{}: annotated as {dims:?} but image is {:?}", record.image.display(), img.dims());
                    None
                }
                _ => Some(img),
            }
        });
        let Some(image) = image else {
            summary.skipped += 1;
            continue;
        };
        match record.to_annotation().and_then(|a| extract_instance(image, &a)) {
            Ok(inst) => {
                save_instance(pool_dir, &inst)?;
                summary.extracted += 1;
            }
            Err(e) => {
                warn!("{} ({}): {e}", record.image.display(), record.label);
                summary.skipped += 1;
            }
        }
    }
    Ok(summary)
}
