use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use metaod::config::CampaignConfig;
use metaod::ingest::extract_pool;
use metaod::natural::{index_backgrounds, score_trials};
use metaod::report::{read_trials, regenerate, write_summary, SUMMARY_FILE};
use metaod::run_campaign;
use metaod_core::clock::{Clock, ManualClock, SystemClock};
use metaod_core::pool::ObjectPool;

#[derive(Parser)]
#[command(name = "metaod", version, about = "Metamorphic testing of black-box object detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut annotated instances out of images into an object pool.
    Extract {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        pool: PathBuf,
    },
    /// Keep only the largest instances of each pool category, deleting the rest.
    Prune {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 0.10)]
        keep: f64,
    },
    /// Run a campaign described by a JSON config file.
    Test {
        #[arg(long)]
        config: PathBuf,
        /// Freeze the report clock so latencies and processing time are 0.
        #[arg(long)]
        fixed_clock: bool,
    },
    /// Rebuild summary.json from a trials file.
    Report {
        #[arg(long)]
        trials: PathBuf,
    },
    /// Mean HOG intersection of a campaign's synthetic images with their backgrounds.
    Naturalness {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        backgrounds: PathBuf,
        /// Pool used to rebuild synthetic images that were not saved.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Saved synthetic images; defaults to `images/` next to the trials file.
        #[arg(long)]
        images: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Extract { images, annotations, pool } => {
            let s = extract_pool(&images, &annotations, &pool)?;
            println!("extracted {} instances into {} ({} skipped)", s.extracted, pool.display(), s.skipped);
        }
        Command::Prune { pool, keep } => {
            if !(keep > 0.0 && keep <= 1.0) {
                bail!("--keep must lie in (0, 1], got {keep}");
            }
            let full = ObjectPool::load(&pool)?;
            let kept = full.prune(keep)?;
            let removed = full.remove_discarded(&kept, &pool)?;
            println!("kept {} of {} instances, removed {removed}", kept.len(), full.len());
        }
        Command::Test { config, fixed_clock } => {
            let cfg = CampaignConfig::load(&config)?;
            let clock: Arc<dyn Clock> =
                if fixed_clock { Arc::new(ManualClock::new(0)) } else { Arc::new(SystemClock::new()) };
            let summary = run_campaign(&cfg, clock)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Report { trials } => {
            let summary = regenerate(&trials)?;
            let out = trials.parent().unwrap_or(std::path::Path::new(".")).join(SUMMARY_FILE);
            write_summary(&out, &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Naturalness { trials, backgrounds, pool, images } => {
            let records = read_trials(&trials)?;
            let bgs = index_backgrounds(&backgrounds)
                .with_context(|| format!("reading backgrounds in {}", backgrounds.display()))?;
            let pool = pool.map(ObjectPool::load).transpose()?;
            let images =
                images.unwrap_or_else(|| trials.parent().unwrap_or(std::path::Path::new(".")).join("images"));
            let report = score_trials(&records, &bgs, Some(&images), pool.as_ref());
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
