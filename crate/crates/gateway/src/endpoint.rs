use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointKind {
    Http,
    Subprocess,
    Mock,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EndpointError {
    #[error("endpoint id must be non-empty")]
    EmptyId,
    #[error("qps_limit must be positive, got {0}")]
    Qps(f64),
    #[error("max_in_flight must be at least 1")]
    InFlight,
    #[error("timeout must be positive")]
    Timeout,
}

/// A detector under test and the limits that apply to querying it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorEndpoint {
    pub id: String,
    pub kind: EndpointKind,
    /// URL for `http`, command line for `subprocess`, scenario file for `mock`.
    pub address: String,
    #[serde(default)]
    pub auth_header: Option<String>,
    pub qps_limit: f64,
    pub max_in_flight: usize,
    /// Milliseconds.
    pub timeout: u64,
    #[serde(default)]
    pub cost_per_query: Option<f64>,
}

impl DetectorEndpoint {
    pub fn new(id: impl Into<String>, kind: EndpointKind, address: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            address: address.into(),
            auth_header: None,
            qps_limit: 10.0,
            max_in_flight: 4,
            timeout: 30_000,
            cost_per_query: None,
        }
    }

    pub fn validate(&self) -> Result<(), EndpointError> {
        if self.id.is_empty() {
            return Err(EndpointError::EmptyId);
        }
        if !(self.qps_limit > 0.0 && self.qps_limit.is_finite()) {
            return Err(EndpointError::Qps(self.qps_limit));
        }
        if self.max_in_flight == 0 {
            return Err(EndpointError::InFlight);
        }
        if self.timeout == 0 {
            return Err(EndpointError::Timeout);
        }
        Ok(())
    }

    /// `METAOD_AUTH_<ID>` with the id upper-cased and every other character
    /// than ASCII letters and digits replaced by `_`.
    pub fn auth_env_var(&self) -> String {
        let id: String = self
            .id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
            .collect();
        format!("METAOD_AUTH_{id}")
    }

    /// The configured header, else the environment variable.
    pub fn resolved_auth(&self) -> Option<String> {
        self.auth_header.clone().or_else(|| std::env::var(self.auth_env_var()).ok())
    }

    /// Directory-safe form of the id.
    pub fn cache_dir_name(&self) -> String {
        self.id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
            .collect()
    }
}

/// Query accounting for one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryStats {
    pub lookups: u64,
    pub queries_sent: u64,
    pub cache_hits: u64,
    pub total_latency_ms: u64,
    pub estimated_cost: f64,
}
