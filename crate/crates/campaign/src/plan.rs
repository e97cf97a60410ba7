use metaod_core::DetectionSet;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedTrial {
    pub category: String,
    pub anchor: usize,
}

/// `multiplier * |baseline|` trials. Each draws its category uniformly from
/// the distinct baseline labels and its anchor uniformly from the baseline
/// detections, independently of one another.
pub fn plan_trials(baseline: &DetectionSet, multiplier: usize, rng: &mut impl Rng) -> Vec<PlannedTrial> {
    if baseline.is_empty() {
        return Vec::new();
    }
    let labels = baseline.labels();
    (0..multiplier * baseline.len())
        .map(|_| {
            let category = labels[rng.random_range(0..labels.len())].clone();
            let anchor = rng.random_range(0..baseline.len());
            PlannedTrial { category, anchor }
        })
        .collect()
}

/// Seed of the random stream used for one background, so results do not
/// depend on the order in which backgrounds are processed.
pub fn background_seed(seed: u64, background_hash: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(background_hash.as_bytes());
    h.finalize().into()
}
