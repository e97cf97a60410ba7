//! Test campaigns against black-box object detectors.
//!
//! A campaign queries each background once for its baseline, plans
//! `budget_multiplier` insertions per baseline detection, runs each through
//! the metamorphic oracle, optionally relocates failing insertions toward the
//! centroid of the baseline, and writes `trials.jsonl`, `relocations.jsonl`
//! and `summary.json`.

pub mod campaign;
pub mod config;
pub mod ingest;
pub mod natural;
pub mod plan;
pub mod report;

pub use campaign::{run_campaign, run_with_gateway, CampaignError, CampaignOutput};
pub use config::{CampaignConfig, InsertionMode};
pub use plan::{plan_trials, PlannedTrial};
pub use report::{emit_report, summarize, CampaignSummary, DistanceHistogram};
