//! Runs a campaign: baselines, planned insertions, relocation, reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{debug, info, warn};
use metaod_core::clock::Clock;
use metaod_core::extraction::ObjectInstance;
use metaod_core::insertion::{
    centroid, default_delta, relocate, sample_guided_from, sample_random, Mode, Placement, ProbeVerdict,
    RelocationOutcome,
};
use metaod_core::naturalness::{hog, hog_intersection, HogDescriptor};
use metaod_core::oracle::{run_trial, Trial, TrialRecord, Verdict};
use metaod_core::pool::{ahash, category_scale, reference_hash, resize_by_scale, ObjectPool, PoolError};
use metaod_core::{BBox, DetectError, Detection, DetectionSet, Detector, ImageBuffer};
use metaod_gateway::Gateway;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{CampaignConfig, ConfigError, InsertionMode};
use crate::plan::{background_seed, plan_trials};
use crate::report::{emit_report, summarize, CampaignSummary, NaturalnessSummary, ReportError, RunFacts};

/// Overrides the response cache location, which defaults to `<out_dir>/cache`.
pub const CACHE_ENV: &str = "METAOD_CACHE_DIR";

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("object pool is empty")]
    EmptyPool,
    #[error("bad background pattern {pattern:?}: {message}")]
    Pattern { pattern: String, message: String },
    #[error("no background matches {0:?}")]
    NoBackgrounds(String),
    #[error("detector endpoint unreachable: {0}")]
    Unreachable(DetectError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("cannot save synthetic image {path}: {message}")]
    SaveImage { path: PathBuf, message: String },
}

/// Everything a campaign produced, in report order.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOutput {
    pub records: Vec<TrialRecord>,
    pub outcomes: Vec<RelocationOutcome>,
    pub summary: CampaignSummary,
}

pub fn cache_root(cfg: &CampaignConfig) -> PathBuf {
    std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| cfg.out_dir.join("cache"))
}

/// Sorted paths matching the background pattern.
pub fn background_paths(pattern: &str) -> Result<Vec<PathBuf>, CampaignError> {
    let bad = |message: String| CampaignError::Pattern { pattern: pattern.to_string(), message };
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| bad(e.to_string()))?
        .collect::<Result<_, _>>()
        .map_err(|e| bad(e.to_string()))?;
    paths.retain(|p| p.is_file());
    paths.sort();
    if paths.is_empty() {
        return Err(CampaignError::NoBackgrounds(pattern.to_string()));
    }
    Ok(paths)
}

/// Connects to the configured endpoint with the on-disk cache, runs the
/// campaign and writes the report files.
pub fn run_campaign(cfg: &CampaignConfig, clock: Arc<dyn Clock>) -> Result<CampaignSummary, CampaignError> {
    cfg.validate()?;
    let gateway = Gateway::connect(cfg.endpoint.clone(), Some(&cache_root(cfg)))
        .map_err(CampaignError::Unreachable)?
        .with_latency_clock(clock.clone());
    Ok(run_with_gateway(cfg, &gateway, clock)?.summary)
}

/// Same as [`run_campaign`] with a caller-built gateway.
pub fn run_with_gateway(
    cfg: &CampaignConfig,
    gateway: &Gateway,
    clock: Arc<dyn Clock>,
) -> Result<CampaignOutput, CampaignError> {
    cfg.validate()?;
    let pool = ObjectPool::load(&cfg.pool_dir)?.prune(cfg.keep_fraction)?;
    let paths = background_paths(&cfg.backgrounds)?;
    let output = execute(cfg, gateway, &pool, &paths, clock)?;
    emit_report(&output.records, &output.outcomes, &output.summary, &cfg.out_dir)?;
    info!(
        "{} synthetic images, {} causing failures ({:.2}%), report in {}",
        output.summary.synthetic_images,
        output.summary.images_causing_failures,
        output.summary.failure_percentage,
        cfg.out_dir.display()
    );
    Ok(output)
}

/// Runs every background against `gateway` without writing reports.
pub fn execute(
    cfg: &CampaignConfig,
    gateway: &Gateway,
    pool: &ObjectPool,
    backgrounds: &[PathBuf],
    clock: Arc<dyn Clock>,
) -> Result<CampaignOutput, CampaignError> {
    if pool.is_empty() {
        return Err(CampaignError::EmptyPool);
    }
    let started = clock.now_ms();
    preflight(gateway, backgrounds)?;

    let results: Vec<BackgroundResult> = backgrounds
        .par_iter()
        .map(|path| process_background(cfg, gateway, pool, path, clock.as_ref()))
        .collect::<Result<_, _>>()?;

    let mut run = RunFacts { endpoint: gateway.endpoint().id.clone(), ..Default::default() };
    let (mut records, mut outcomes) = (Vec::new(), Vec::new());
    let (mut inserted, mut relocated) = (Vec::new(), Vec::new());
    for r in results {
        match r.detected {
            0 => run.backgrounds_skipped += 1,
            n => {
                run.backgrounds += 1;
                run.detected_objects += n;
            }
        }
        run.planned_trials += r.planned;
        run.placement_exhausted += r.exhausted;
        records.extend(r.records);
        outcomes.extend(r.outcomes);
        inserted.extend(r.inserted_hog);
        relocated.extend(r.relocated_hog);
    }
    run.naturalness = NaturalnessSummary::from_scores(&inserted, &relocated);
    run.processing_time_ms = clock.now_ms().saturating_sub(started);
    run.queries = gateway.stats();
    let summary = summarize(&records, &outcomes, run);
    Ok(CampaignOutput { records, outcomes, summary })
}

/// Queries the first readable background so that a dead endpoint aborts the
/// campaign instead of degrading every trial to skipped.
fn preflight(gateway: &Gateway, backgrounds: &[PathBuf]) -> Result<(), CampaignError> {
    let Some(image) = backgrounds.iter().find_map(|p| ImageBuffer::open(p).ok()) else {
        return Ok(());
    };
    match gateway.detect(&image, None) {
        Err(e @ (DetectError::Transport(_) | DetectError::RateLimited { .. })) => Err(CampaignError::Unreachable(e)),
        _ => Ok(()),
    }
}

#[derive(Default)]
struct BackgroundResult {
    detected: usize,
    planned: usize,
    exhausted: usize,
    records: Vec<TrialRecord>,
    outcomes: Vec<RelocationOutcome>,
    inserted_hog: Vec<f64>,
    relocated_hog: Vec<f64>,
}

/// Per-background state shared by planned trials and relocation probes.
struct Collector<'a> {
    cfg: &'a CampaignConfig,
    background_hog: Option<HogDescriptor>,
    baseline: &'a DetectionSet,
    result: BackgroundResult,
}

#[derive(Serialize)]
struct SyntheticLabels<'a> {
    id: &'a str,
    background: &'a str,
    detections: &'a [Detection],
}

impl Collector<'_> {
    fn absorb(&mut self, trial: Trial) -> Result<Verdict, CampaignError> {
        if let Some(err) = &trial.error {
            warn!("trial {} skipped: {err}", trial.id);
        }
        if let (Some(bg), Some(img), false) = (&self.background_hog, &trial.synthetic, trial.verdict == Verdict::Skipped) {
            if let Ok(score) = hog(img).and_then(|h| hog_intersection(bg, &h)) {
                match trial.placement.mode {
                    Mode::Relocated => self.result.relocated_hog.push(score),
                    _ => self.result.inserted_hog.push(score),
                }
            }
        }
        if self.cfg.save_images && trial.verdict == Verdict::Fail {
            if let Some(img) = &trial.synthetic {
                self.save(&trial, img)?;
            }
        }
        self.result.records.push(trial.record());
        Ok(trial.verdict)
    }

    /// Failing synthetic image plus the background's baseline as its labels.
    fn save(&self, trial: &Trial, img: &ImageBuffer) -> Result<(), CampaignError> {
        let dir = self.cfg.out_dir.join("images");
        let png = dir.join(format!("{}.png", trial.id));
        let err = |path: &Path, message: String| CampaignError::SaveImage { path: path.into(), message };
        std::fs::create_dir_all(&dir).map_err(|e| err(&dir, e.to_string()))?;
        img.save_png(&png).map_err(|e| err(&png, e.to_string()))?;
        let labels = SyntheticLabels { id: &trial.id, background: &trial.background, detections: &self.baseline.detections };
        let json = dir.join(format!("{}.json", trial.id));
        std::fs::write(&json, serde_json::to_vec_pretty(&labels).expect("labels serialize"))
            .map_err(|e| err(&json, e.to_string()))
    }
}

/// Integer crop of `bbox` clamped to the image, if anything remains.
fn crop_box(image: &ImageBuffer, bbox: &BBox) -> Option<ImageBuffer> {
    let (w, h) = image.dims();
    let x0 = bbox.x.floor().max(0.0) as u32;
    let y0 = bbox.y.floor().max(0.0) as u32;
    let x1 = (bbox.right().ceil().max(0.0) as u32).min(w);
    let y1 = (bbox.bottom().ceil().max(0.0) as u32).min(h);
    (x1 > x0 && y1 > y0).then(|| image.crop(x0, y0, x1 - x0, y1 - y0))
}

/// Picks the pool instance closest to what the background shows for
/// `category` and scales it to the category's mean box area. Categories the
/// pool lacks are replaced by a uniformly drawn pool category.
pub fn prepare_object(
    pool: &ObjectPool,
    category: &str,
    image: &ImageBuffer,
    baseline: &DetectionSet,
    rng: &mut impl Rng,
) -> Result<(ObjectInstance, f64), CampaignError> {
    let category = if pool.category(category).is_some() {
        category.to_string()
    } else {
        let names: Vec<&str> = pool.categories().map(|(c, _)| c).collect();
        let pick = names[rng.random_range(0..names.len())].to_string();
        debug!("category {category} missing from pool, using {pick}");
        pick
    };
    let same: Vec<&Detection> = baseline.detections.iter().filter(|d| d.label == category).collect();
    let crops: Vec<ImageBuffer> = same.iter().filter_map(|d| crop_box(image, &d.bbox)).collect();
    let reference = reference_hash(&category, crops.iter()).unwrap_or_else(|_| ahash(image));
    let chosen = pool.select_similar(&category, &reference)?;
    let boxes: Vec<BBox> = if same.is_empty() {
        baseline.boxes().copied().collect()
    } else {
        same.iter().map(|d| d.bbox).collect()
    };
    let scale = category_scale(chosen, &boxes, image.dims());
    Ok((resize_by_scale(chosen, scale, Some(image.dims())), scale))
}

fn process_background(
    cfg: &CampaignConfig,
    detector: &dyn Detector,
    pool: &ObjectPool,
    path: &Path,
    clock: &dyn Clock,
) -> Result<BackgroundResult, CampaignError> {
    let image = match ImageBuffer::open(path) {
        Ok(img) => img,
        Err(e) => {
            warn!("skipping {}: {e}", path.display());
            return Ok(BackgroundResult::default());
        }
    };
    let hash = image.content_hash();
    let baseline = match detector.detect(&image, None) {
        Ok(b) if b.is_empty() => {
            info!("skipping {}: no baseline detections", path.display());
            return Ok(BackgroundResult::default());
        }
        Ok(b) => b,
        Err(e) => {
            warn!("skipping {}: baseline query failed: {e}", path.display());
            return Ok(BackgroundResult::default());
        }
    };
    let dims = image.dims();
    let mut rng = ChaCha8Rng::from_seed(background_seed(cfg.seed, &hash));
    let plan = plan_trials(&baseline, cfg.budget_multiplier, &mut rng);
    let oracle_cfg = cfg.oracle();
    let sampler = cfg.sampler();

    let mut collector = Collector {
        cfg,
        background_hog: hog(&image).ok(),
        baseline: &baseline,
        result: BackgroundResult { detected: baseline.len(), planned: plan.len(), ..Default::default() },
    };
    let mut objects: BTreeMap<String, (ObjectInstance, f64)> = BTreeMap::new();

    for planned in &plan {
        if !objects.contains_key(&planned.category) {
            let prepared = prepare_object(pool, &planned.category, &image, &baseline, &mut rng)?;
            objects.insert(planned.category.clone(), prepared);
        }
        let (object, scale) = &objects[&planned.category];
        let sampled = match cfg.insertion_mode {
            InsertionMode::Guided => {
                sample_guided_from(&baseline, object, dims, &mut rng, &sampler, Some(planned.anchor))
            }
            InsertionMode::Random => sample_random(&baseline, object, dims, &mut rng, &sampler),
        };
        let placement = match sampled {
            Ok(p) => p.with_scale(*scale),
            Err(e) => {
                debug!("no placement on {}: {e}", path.display());
                collector.result.exhausted += 1;
                continue;
            }
        };
        let trial = run_trial(&image, &hash, &baseline, object, &placement, detector, &oracle_cfg, clock);
        if collector.absorb(trial)? == Verdict::Fail && cfg.enable_relocation {
            let outcome = relocate_from(&mut collector, &image, &hash, object, &placement, detector, clock)?;
            collector.result.outcomes.push(outcome);
        }
    }
    Ok(collector.result)
}

fn relocate_from(
    collector: &mut Collector<'_>,
    image: &ImageBuffer,
    hash: &str,
    object: &ObjectInstance,
    start: &Placement,
    detector: &dyn Detector,
    clock: &dyn Clock,
) -> Result<RelocationOutcome, CampaignError> {
    let baseline = collector.baseline;
    let target = centroid(baseline).expect("baseline is non-empty");
    let delta = collector.cfg.delta.unwrap_or_else(|| default_delta(start.center.distance(&target)));
    let oracle_cfg = collector.cfg.oracle();
    let mut failure = None;
    let outcome = relocate(hash, start, ProbeVerdict::Fail, target, delta, |probe| {
        if failure.is_some() || !probe.is_valid(baseline, image.dims()) {
            return ProbeVerdict::Invalid;
        }
        let trial = run_trial(image, hash, baseline, object, probe, detector, &oracle_cfg, clock);
        match collector.absorb(trial) {
            Ok(v) => v.as_probe(),
            Err(e) => {
                failure = Some(e);
                ProbeVerdict::Invalid
            }
        }
    })
    .expect("start verdict is a failure");
    match failure {
        Some(e) => Err(e),
        None => Ok(outcome),
    }
}
