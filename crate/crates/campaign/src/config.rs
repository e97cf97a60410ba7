use std::path::{Path, PathBuf};

use metaod_core::insertion::SamplerConfig;
use metaod_core::metrics::Interpolation;
use metaod_core::oracle::OracleConfig;
use metaod_core::MetricsConfig;
use metaod_gateway::DetectorEndpoint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InsertionMode {
    #[default]
    Guided,
    Random,
}

fn default_multiplier() -> usize {
    10
}

fn default_k() -> f64 {
    2.0
}

fn default_attempts() -> usize {
    100
}

fn default_half() -> f64 {
    0.5
}

fn default_keep() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

/// Campaign settings as read from the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub endpoint: DetectorEndpoint,
    /// Glob pattern selecting the background images.
    pub backgrounds: String,
    pub pool_dir: PathBuf,
    #[serde(default = "default_multiplier")]
    pub budget_multiplier: usize,
    #[serde(default)]
    pub insertion_mode: InsertionMode,
    #[serde(default = "default_true")]
    pub enable_relocation: bool,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
    /// Bisection resolution as a fraction of the segment; `null` picks
    /// `max(0.01, 2 px / length)` per search.
    #[serde(default)]
    pub delta: Option<f64>,
    /// IoU threshold of the mAP computation.
    #[serde(default = "default_half")]
    pub eps: f64,
    #[serde(default = "default_half")]
    pub eps_excl: f64,
    /// Share of each pool category used, largest masks first.
    #[serde(default = "default_keep")]
    pub keep_fraction: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub save_images: bool,
}

impl CampaignConfig {
    pub fn new(endpoint: DetectorEndpoint, backgrounds: impl Into<String>, pool_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            endpoint,
            backgrounds: backgrounds.into(),
            pool_dir: pool_dir.into(),
            budget_multiplier: default_multiplier(),
            insertion_mode: InsertionMode::Guided,
            enable_relocation: true,
            k: default_k(),
            max_attempts: default_attempts(),
            delta: None,
            eps: 0.5,
            eps_excl: 0.5,
            keep_fraction: default_keep(),
            seed: 0,
            out_dir: out_dir.into(),
            save_images: false,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.budget_multiplier < 1 {
            return bad("budget_multiplier must be at least 1".into());
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return bad(format!("keep_fraction must lie in (0, 1], got {}", self.keep_fraction));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return bad(format!("k must be positive, got {}", self.k));
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1".into());
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("delta must lie in (0, 1], got {d}"));
            }
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad(format!("eps must lie in (0, 1), got {}", self.eps));
        }
        if !(self.eps_excl > 0.0 && self.eps_excl <= 1.0) {
            return bad(format!("eps_excl must lie in (0, 1], got {}", self.eps_excl));
        }
        self.endpoint.validate().map_err(|e| ConfigError::Invalid(format!("endpoint: {e}")))
    }

    pub fn oracle(&self) -> OracleConfig {
        OracleConfig {
            metrics: MetricsConfig { iou_threshold: self.eps, interpolation: Interpolation::AllPoint },
            eps_excl: self.eps_excl,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig { k: self.k, max_attempts: self.max_attempts }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use metaod_gateway::EndpointKind;

    fn cfg() -> CampaignConfig {
        CampaignConfig::new(DetectorEndpoint::new("m", EndpointKind::Mock, "s.json"), "bg/*.png", "pool", "out")
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let text = r#"{
            "endpoint": {"id": "svc", "kind": "http", "address": "http://localhost:1/x",
                         "qps_limit": 2, "max_in_flight": 1, "timeout": 1000},
            "backgrounds": "imgs/*.jpg", "pool_dir": "pool", "seed": 7, "out_dir": "out"
        }"#;
        let c: CampaignConfig = serde_json::from_str(text).unwrap();
        assert_eq!(c.budget_multiplier, 10);
        assert_eq!(c.insertion_mode, InsertionMode::Guided);
        assert!(c.enable_relocation);
        assert_eq!((c.k, c.max_attempts, c.delta), (2.0, 100, None));
        assert_eq!((c.eps, c.eps_excl, c.keep_fraction), (0.5, 0.5, 0.1));
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = serde_json::to_value(cfg()).unwrap();
        v["clock"] = serde_json::json!("fixed");
        assert!(serde_json::from_value::<CampaignConfig>(v).is_err());
    }

    #[test]
    fn round_trips() {
        let c = cfg();
        let back: CampaignConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invariants_are_enforced() {
        let mut c = cfg();
        c.budget_multiplier = 0;
        assert!(c.validate().is_err());
        for kf in [0.0, -0.1, 1.5, f64::NAN] {
            let c = CampaignConfig { keep_fraction: kf, ..cfg() };
            assert!(c.validate().is_err(), "{kf}");
        }
        assert!(CampaignConfig { keep_fraction: 1.0, ..cfg() }.validate().is_ok());
        assert!(CampaignConfig { delta: Some(0.0), ..cfg() }.validate().is_err());
        assert!(CampaignConfig { eps: 1.0, ..cfg() }.validate().is_err());
    }
}
