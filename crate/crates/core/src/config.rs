//! Extraction configuration shared across the pipeline stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::EmConfig;

/// Knobs for the full extraction loop. Defaults follow the empirically
/// chosen operating point: z = 0.25 neighborhood width, tau = 0.5
/// membership threshold, tau1 = 0.25 captured-variance threshold and a 10%
/// update fraction between iterations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    /// Number of concepts to extract per query.
    pub num_concepts: usize,
    /// Neighborhood width: threshold is mu + z * sigma.
    pub z: f64,
    /// Posterior membership threshold for the concept set.
    pub tau: f64,
    /// Captured-variance threshold for subspace rank selection.
    pub tau1: f64,
    /// Fraction of the dataset updated by suppression each iteration.
    pub update_fraction: f64,
    /// Images retrieved per concept.
    pub retrieve_n: usize,
    /// Lower bound on neighborhood size; the top rows by similarity fill in
    /// when the strict threshold yields fewer.
    pub min_neighborhood: usize,
    /// Minimum sample count per mixture component for a candidate to be
    /// valid. `None` resolves to max(10, 5% of the neighborhood).
    pub min_component_count: Option<usize>,
    /// Cap on surrogate candidates evaluated per iteration; larger
    /// neighborhoods are subsampled (seeded).
    pub max_candidates: usize,
    /// EM variance floor.
    pub sigma_floor: f64,
    /// A winning surrogate must separate its modes by more than this.
    pub min_sep_score: f64,
    /// Mean-center members before fitting the concept subspace. Off by
    /// default: the projection and suppression operate on raw embeddings,
    /// and a centered basis omits the concept direction itself, which lets
    /// the same concept resurface after suppression.
    pub center_pca: bool,
    /// Exclude images retrieved by earlier concepts of the same query.
    pub exclude_prior_retrieved: bool,
    /// Pair sample size for dataset similarity statistics.
    pub stats_sample_pairs: usize,
    /// Master seed; every stage derives its own stream.
    pub seed: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            num_concepts: 3,
            z: 0.25,
            tau: 0.5,
            tau1: 0.25,
            update_fraction: 0.10,
            retrieve_n: 20,
            min_neighborhood: 200,
            min_component_count: None,
            max_candidates: 512,
            sigma_floor: 1e-4,
            min_sep_score: 0.0,
            center_pca: false,
            exclude_prior_retrieved: true,
            stats_sample_pairs: 100_000,
            seed: 0,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.num_concepts < 1 {
            return bad("num_concepts must be >= 1");
        }
        if !self.z.is_finite() {
            return bad("z must be finite");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if !(self.tau1 > 0.0 && self.tau1 <= 1.0) {
            return bad("tau1 must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.update_fraction) {
            return bad("update_fraction must lie in [0, 1]");
        }
        if self.retrieve_n < 1 {
            return bad("retrieve_n must be >= 1");
        }
        if self.max_candidates < 1 {
            return bad("max_candidates must be >= 1");
        }
        if !(self.sigma_floor > 0.0) {
            return bad("sigma_floor must be positive");
        }
        if !self.min_sep_score.is_finite() {
            return bad("min_sep_score must be finite");
        }
        if self.stats_sample_pairs < 1 {
            return bad("stats_sample_pairs must be >= 1");
        }
        Ok(())
    }

    /// Component-count floor for a neighborhood of the given size.
    pub fn resolved_min_component_count(&self, neighborhood_len: usize) -> usize {
        match self.min_component_count {
            Some(v) => v,
            None => 10.max((neighborhood_len as f64 * 0.05).ceil() as usize),
        }
    }

    pub fn em_config(&self) -> EmConfig {
        EmConfig {
            sigma_floor: self.sigma_floor,
            ..EmConfig::default()
        }
    }
}
