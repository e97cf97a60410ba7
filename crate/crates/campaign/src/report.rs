//! Report files and the summary tables derived from them.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use metaod_core::insertion::{Mode, RelocationOutcome};
use metaod_core::metrics::FailureKind;
use metaod_core::oracle::{TrialRecord, Verdict};
use metaod_gateway::QueryStats;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRIALS_FILE: &str = "trials.jsonl";
pub const RELOCATIONS_FILE: &str = "relocations.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}, line {line}: {source}")]
    Parse { path: PathBuf, line: usize, source: serde_json::Error },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

/// Facts about a run that cannot be recounted from the trial lines.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunFacts {
    pub endpoint: String,
    /// Backgrounds with a non-empty baseline.
    pub backgrounds: usize,
    /// Backgrounds dropped for an empty baseline or a failed query.
    pub backgrounds_skipped: usize,
    /// Baseline detections summed over processed backgrounds.
    pub detected_objects: usize,
    pub planned_trials: usize,
    /// Planned trials for which no valid placement was found.
    pub placement_exhausted: usize,
    pub processing_time_ms: u64,
    pub queries: QueryStats,
    pub naturalness: NaturalnessSummary,
}

/// Mean HOG intersection between synthetic images and their backgrounds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NaturalnessSummary {
    pub inserted: Option<f64>,
    pub relocated: Option<f64>,
    pub inserted_count: usize,
    pub relocated_count: usize,
}

impl NaturalnessSummary {
    pub fn from_scores(inserted: &[f64], relocated: &[f64]) -> Self {
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Self {
            inserted: mean(inserted),
            relocated: mean(relocated),
            inserted_count: inserted.len(),
            relocated_count: relocated.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelocationSummary {
    pub searches: usize,
    /// Oracle calls issued by all searches, including invalid positions.
    pub probes: usize,
    pub failing_with_inserted: usize,
    pub failing_with_relocated: usize,
    pub unique_relocated: usize,
}

/// Relocation distance `frontier_t * 100%`. `bins[i]` counts searches with
/// distance in `[10 i, 10 (i + 1))` percent, excluding exactly 0, which is
/// `no_progress`; reaching the centroid (100%) is `reached_centroid`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DistanceHistogram {
    pub bins: [usize; 10],
    pub no_progress: usize,
    pub reached_centroid: usize,
}

impl DistanceHistogram {
    pub fn add(&mut self, frontier_t: f64) {
        let pct = frontier_t * 100.0;
        if pct <= 0.0 {
            self.no_progress += 1;
        } else if pct >= 100.0 {
            self.reached_centroid += 1;
        } else {
            self.bins[((pct / 10.0) as usize).min(9)] += 1;
        }
    }

    pub fn total(&self) -> usize {
        self.bins.iter().sum::<usize>() + self.no_progress + self.reached_centroid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    #[serde(flatten)]
    pub run: RunFacts,
    /// Every queried synthetic image: planned trials plus relocation probes.
    pub synthetic_images: usize,
    pub skipped_trials: usize,
    pub images_causing_failures: usize,
    /// Over non-skipped trials.
    pub failure_percentage: f64,
    /// Trials showing each failure kind at least once.
    pub failures_by_kind: BTreeMap<FailureKind, usize>,
    pub estimated_cost: f64,
    pub relocation: RelocationSummary,
    pub distance_histogram: DistanceHistogram,
}

pub fn summarize(records: &[TrialRecord], outcomes: &[RelocationOutcome], run: RunFacts) -> CampaignSummary {
    let fails = |relocated: bool| {
        records
            .iter()
            .filter(|r| r.verdict == Verdict::Fail && (r.mode == Mode::Relocated) == relocated)
            .count()
    };
    let skipped = records.iter().filter(|r| r.verdict == Verdict::Skipped).count();
    let failing = records.iter().filter(|r| r.verdict == Verdict::Fail).count();
    let counted = records.len() - skipped;

    let mut by_kind = BTreeMap::new();
    for r in records.iter().filter(|r| r.verdict == Verdict::Fail) {
        let kinds: HashSet<FailureKind> = r.failures.iter().map(|f| f.kind).collect();
        for k in kinds {
            *by_kind.entry(k).or_insert(0) += 1;
        }
    }

    let unique: HashSet<_> = records
        .iter()
        .filter(|r| r.verdict == Verdict::Fail && r.mode == Mode::Relocated)
        .map(|r| (&r.background, &r.object_id, r.center[0].round() as i64, r.center[1].round() as i64))
        .collect();

    let mut histogram = DistanceHistogram::default();
    for o in outcomes {
        histogram.add(o.frontier_t);
    }

    CampaignSummary {
        synthetic_images: records.len(),
        skipped_trials: skipped,
        images_causing_failures: failing,
        failure_percentage: if counted == 0 { 0.0 } else { 100.0 * failing as f64 / counted as f64 },
        failures_by_kind: by_kind,
        estimated_cost: run.queries.estimated_cost,
        relocation: RelocationSummary {
            searches: outcomes.len(),
            probes: outcomes.iter().map(|o| o.queries_used).sum(),
            failing_with_inserted: fails(false),
            failing_with_relocated: fails(true),
            unique_relocated: unique.len(),
        },
        distance_histogram: histogram,
        run,
    }
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ReportError> {
    let file = std::fs::File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| ReportError::Io { path: path.into(), source: e.into() })?;
        w.write_all(b"\n").map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

pub fn write_summary(path: &Path, summary: &CampaignSummary) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(io(path))
}

/// Writes `trials.jsonl`, `relocations.jsonl` and `summary.json`.
pub fn emit_report(
    records: &[TrialRecord],
    outcomes: &[RelocationOutcome],
    summary: &CampaignSummary,
    out_dir: &Path,
) -> Result<(), ReportError> {
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    write_lines(&out_dir.join(TRIALS_FILE), records)?;
    write_lines(&out_dir.join(RELOCATIONS_FILE), outcomes)?;
    write_summary(&out_dir.join(SUMMARY_FILE), summary)
}

pub fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ReportError> {
    let file = std::fs::File::open(path).map_err(io(path))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| ReportError::Parse {
            path: path.into(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialRecord>, ReportError> {
    read_lines(path)
}

/// Rebuilds the summary from a trials file. Relocation searches and run
/// facts are taken from `relocations.jsonl` and `summary.json` next to it
/// when present.
pub fn regenerate(trials_path: &Path) -> Result<CampaignSummary, ReportError> {
    let records = read_trials(trials_path)?;
    let dir = trials_path.parent().unwrap_or(Path::new("."));
    let reloc_path = dir.join(RELOCATIONS_FILE);
    let outcomes = if reloc_path.exists() { read_lines(&reloc_path)? } else { Vec::new() };
    let summary_path = dir.join(SUMMARY_FILE);
    let run = if summary_path.exists() {
        let text = std::fs::read_to_string(&summary_path).map_err(io(&summary_path))?;
        serde_json::from_str::<CampaignSummary>(&text)
            .map_err(|source| ReportError::Parse { path: summary_path.clone(), line: 1, source })?
            .run
    } else {
        RunFacts::default()
    };
    Ok(summarize(&records, &outcomes, run))
}

#[cfg(test)]
mod tests {
    use super::*;
    use metaod_core::metrics::FailureType;
    use metaod_core::Point;

    fn record(i: usize, mode: Mode, verdict: Verdict, center: [f64; 2]) -> TrialRecord {
        TrialRecord {
            id: format!("t{i}"),
            background: "bg".into(),
            object_id: "obj".into(),
            category: "car".into(),
            mode,
            center,
            scale: 1.0,
            anchor_index: (mode == Mode::Guided).then_some(0),
            verdict,
            map: match verdict {
                Verdict::Pass => Some(1.0),
                Verdict::Fail => Some(0.5),
                Verdict::Skipped => None,
            },
            failures: if verdict == Verdict::Fail {
                vec![FailureType { kind: FailureKind::RecognitionMiss, baseline: Some(0), synthetic: None }]
            } else {
                Vec::new()
            },
            excluded: Vec::new(),
            latency_ms: 3,
        }
    }

    fn outcome(t: f64) -> RelocationOutcome {
        RelocationOutcome {
            background: "bg".into(),
            object_id: "obj".into(),
            start: Point::new(0., 0.),
            target: Point::new(10., 0.),
            frontier_t: t,
            failing_positions: Vec::new(),
            queries_used: 2,
        }
    }

    #[test]
    fn empty_report_is_zeroed() {
        let dir = tempfile::tempdir().unwrap();
        let s = summarize(&[], &[], RunFacts::default());
        emit_report(&[], &[], &s, dir.path()).unwrap();
        assert_eq!(std::fs::read(dir.path().join(TRIALS_FILE)).unwrap(), b"");
        assert_eq!((s.synthetic_images, s.images_causing_failures, s.failure_percentage), (0, 0, 0.0));
        assert_eq!(s.distance_histogram.total(), 0);
    }

    #[test]
    fn lines_keep_execution_order() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<_> = (0..3).map(|i| record(i, Mode::Guided, Verdict::Pass, [i as f64, 0.0])).collect();
        emit_report(&recs, &[], &summarize(&recs, &[], RunFacts::default()), dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(TRIALS_FILE)).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(read_trials(&dir.path().join(TRIALS_FILE)).unwrap(), recs);
    }

    #[test]
    fn counters_and_denominator() {
        let recs = vec![
            record(0, Mode::Guided, Verdict::Fail, [5.0, 5.0]),
            record(1, Mode::Guided, Verdict::Pass, [6.0, 5.0]),
            record(2, Mode::Guided, Verdict::Skipped, [7.0, 5.0]),
            record(3, Mode::Relocated, Verdict::Fail, [8.2, 5.0]),
            record(4, Mode::Relocated, Verdict::Fail, [7.9, 5.1]),
            record(5, Mode::Relocated, Verdict::Pass, [9.0, 5.0]),
        ];
        let s = summarize(&recs, &[outcome(0.5)], RunFacts::default());
        assert_eq!(s.synthetic_images, 6);
        assert_eq!(s.skipped_trials, 1);
        assert_eq!(s.images_causing_failures, 3);
        assert!((s.failure_percentage - 60.0).abs() < 1e-12);
        assert_eq!(s.relocation.failing_with_inserted, 1);
        assert_eq!(s.relocation.failing_with_relocated, 2);
        // both relocated failures round to (8, 5)
        assert_eq!(s.relocation.unique_relocated, 1);
        assert_eq!(s.failures_by_kind[&FailureKind::RecognitionMiss], 3);
        assert_eq!(s.relocation.probes, 2);
    }

    #[test]
    fn histogram_edges() {
        let mut h = DistanceHistogram::default();
        for t in [0.0, 0.05, 0.1, 0.999, 1.0, 0.5] {
            h.add(t);
        }
        assert_eq!(h.no_progress, 1);
        assert_eq!(h.reached_centroid, 1);
        assert_eq!(h.bins[0], 1);
        assert_eq!(h.bins[1], 1);
        assert_eq!(h.bins[5], 1);
        assert_eq!(h.bins[9], 1);
        assert_eq!(h.total(), 6);
    }

    #[test]
    fn regenerate_matches_original() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![record(0, Mode::Guided, Verdict::Fail, [1.0, 1.0]), record(1, Mode::Relocated, Verdict::Pass, [2.0, 1.0])];
        let outcomes = vec![outcome(0.25), outcome(1.0)];
        let run = RunFacts { endpoint: "svc".into(), backgrounds: 1, detected_objects: 2, processing_time_ms: 40, ..Default::default() };
        let s = summarize(&recs, &outcomes, run);
        emit_report(&recs, &outcomes, &s, dir.path()).unwrap();
        assert_eq!(regenerate(&dir.path().join(TRIALS_FILE)).unwrap(), s);
    }

    #[test]
    fn summary_invariants_hold() {
        let recs: Vec<_> = (0..20)
            .map(|i| {
                let v = [Verdict::Pass, Verdict::Fail, Verdict::Skipped][i % 3];
                let m = if i % 2 == 0 { Mode::Guided } else { Mode::Relocated };
                record(i, m, v, [i as f64, 0.0])
            })
            .collect();
        let s = summarize(&recs, &[], RunFacts::default());
        assert!(s.images_causing_failures <= s.synthetic_images);
        assert!(s.relocation.unique_relocated <= s.relocation.failing_with_relocated);
    }

    #[test]
    fn unreadable_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(TRIALS_FILE);
        std::fs::write(&p, "{}\n").unwrap();
        match read_trials(&p) {
            Err(ReportError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }
}
