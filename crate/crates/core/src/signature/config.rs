use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::Metric;
use crate::clustering::DEFAULT_K_SET;
use crate::dimension::DEFAULT_FO_ALPHA;
use crate::diversity::{DEFAULT_MAGNITUDE_GRID, DEFAULT_UNIFORMITY_T};
use crate::error::{Result, UtsError};

/// One row of the descriptor inventory; each has its own sample budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Descriptor {
    PhDimension,
    PhStatistics,
    PersistenceEntropy,
    EulerCharacteristic,
    Twonn,
    PcaDimension,
    EffectiveRank,
    /// Magnitude dimension and magnitude area, read off one magnitude curve.
    Magnitude,
    Spread,
    VendiScore,
    PairwiseSimilarity,
    Uniformity,
    Isoscore,
    Silhouette,
}

impl Descriptor {
    pub const ALL: [Descriptor; 14] = [
        Descriptor::PhDimension,
        Descriptor::PhStatistics,
        Descriptor::PersistenceEntropy,
        Descriptor::EulerCharacteristic,
        Descriptor::Twonn,
        Descriptor::PcaDimension,
        Descriptor::EffectiveRank,
        Descriptor::Magnitude,
        Descriptor::Spread,
        Descriptor::VendiScore,
        Descriptor::PairwiseSimilarity,
        Descriptor::Uniformity,
        Descriptor::Isoscore,
        Descriptor::Silhouette,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Descriptor::PhDimension => "ph_dimension",
            Descriptor::PhStatistics => "ph_statistics",
            Descriptor::PersistenceEntropy => "persistence_entropy",
            Descriptor::EulerCharacteristic => "euler_characteristic",
            Descriptor::Twonn => "twonn",
            Descriptor::PcaDimension => "pca_dimension",
            Descriptor::EffectiveRank => "effective_rank",
            Descriptor::Magnitude => "magnitude",
            Descriptor::Spread => "spread",
            Descriptor::VendiScore => "vendi_score",
            Descriptor::PairwiseSimilarity => "pairwise_similarity",
            Descriptor::Uniformity => "uniformity",
            Descriptor::Isoscore => "isoscore",
            Descriptor::Silhouette => "silhouette",
        }
    }

    /// Whether the descriptor is built on pairwise distances and so emitted per metric.
    pub fn is_metric_dependent(self) -> bool {
        !matches!(
            self,
            Descriptor::PcaDimension
                | Descriptor::EffectiveRank
                | Descriptor::VendiScore
                | Descriptor::Uniformity
                | Descriptor::Isoscore
        )
    }

    /// Smallest sample for which the descriptor is defined.
    pub fn min_budget(self) -> usize {
        match self {
            Descriptor::PhDimension => 16,
            Descriptor::Twonn | Descriptor::Silhouette => 3,
            _ => 2,
        }
    }

    /// Random stream reserved for this descriptor's subsample.
    pub(crate) fn stream(self) -> u64 {
        Descriptor::ALL.iter().position(|&d| d == self).unwrap() as u64 + 1
    }
}

impl std::str::FromStr for Descriptor {
    type Err = UtsError;

    fn from_str(s: &str) -> Result<Self> {
        Descriptor::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| UtsError::Schema(format!("unknown descriptor `{s}`")))
    }
}

/// Per-descriptor sample budgets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub ph_dimension: usize,
    pub ph_statistics: usize,
    pub persistence_entropy: usize,
    pub euler_characteristic: usize,
    pub twonn: usize,
    pub pca_dimension: usize,
    pub effective_rank: usize,
    pub magnitude: usize,
    pub spread: usize,
    pub vendi_score: usize,
    pub pairwise_similarity: usize,
    pub uniformity: usize,
    pub isoscore: usize,
    pub silhouette: usize,
}

impl Budgets {
    /// Sample counts of the full study.
    pub fn full() -> Self {
        Self {
            ph_dimension: 5_000,
            ph_statistics: 5_000,
            persistence_entropy: 20_000,
            euler_characteristic: 5_000,
            twonn: 50_000,
            pca_dimension: 50_000,
            effective_rank: 100_000,
            magnitude: 5_000,
            spread: 10_000,
            vendi_score: 20_000,
            pairwise_similarity: 50_000,
            uniformity: 20_000,
            isoscore: 500_000,
            silhouette: 20_000,
        }
    }

    /// The full budgets divided by ten.
    pub fn desk() -> Self {
        let f = Self::full();
        Self {
            ph_dimension: f.ph_dimension / 10,
            ph_statistics: f.ph_statistics / 10,
            persistence_entropy: f.persistence_entropy / 10,
            euler_characteristic: f.euler_characteristic / 10,
            twonn: f.twonn / 10,
            pca_dimension: f.pca_dimension / 10,
            effective_rank: f.effective_rank / 10,
            magnitude: f.magnitude / 10,
            spread: f.spread / 10,
            vendi_score: f.vendi_score / 10,
            pairwise_similarity: f.pairwise_similarity / 10,
            uniformity: f.uniformity / 10,
            isoscore: f.isoscore / 10,
            silhouette: f.silhouette / 10,
        }
    }

    /// Every budget set to `n`.
    pub fn uniform(n: usize) -> Self {
        Self {
            ph_dimension: n,
            ph_statistics: n,
            persistence_entropy: n,
            euler_characteristic: n,
            twonn: n,
            pca_dimension: n,
            effective_rank: n,
            magnitude: n,
            spread: n,
            vendi_score: n,
            pairwise_similarity: n,
            uniformity: n,
            isoscore: n,
            silhouette: n,
        }
    }

    pub fn get(&self, d: Descriptor) -> usize {
        match d {
            Descriptor::PhDimension => self.ph_dimension,
            Descriptor::PhStatistics => self.ph_statistics,
            Descriptor::PersistenceEntropy => self.persistence_entropy,
            Descriptor::EulerCharacteristic => self.euler_characteristic,
            Descriptor::Twonn => self.twonn,
            Descriptor::PcaDimension => self.pca_dimension,
            Descriptor::EffectiveRank => self.effective_rank,
            Descriptor::Magnitude => self.magnitude,
            Descriptor::Spread => self.spread,
            Descriptor::VendiScore => self.vendi_score,
            Descriptor::PairwiseSimilarity => self.pairwise_similarity,
            Descriptor::Uniformity => self.uniformity,
            Descriptor::Isoscore => self.isoscore,
            Descriptor::Silhouette => self.silhouette,
        }
    }
}

impl Default for Budgets {
    fn default() -> Self {
        Self::desk()
    }
}

/// Which descriptors to compute, on what budgets, with which settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorConfig {
    pub descriptors: Vec<Descriptor>,
    pub metrics: Vec<Metric>,
    pub budgets: Budgets,
    /// Highest homology dimension for diagram-based descriptors.
    pub max_dim: usize,
    pub seeds: Vec<u64>,
    pub ph_alpha: f64,
    pub ph_trials: usize,
    pub fo_alpha: f64,
    pub magnitude_grid: usize,
    pub uniformity_t: f64,
    pub k_set: Vec<usize>,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            descriptors: Descriptor::ALL.to_vec(),
            metrics: Metric::ALL.to_vec(),
            budgets: Budgets::desk(),
            max_dim: 1,
            seeds: vec![0, 1, 2],
            ph_alpha: 1.0,
            ph_trials: 5,
            fo_alpha: DEFAULT_FO_ALPHA,
            magnitude_grid: DEFAULT_MAGNITUDE_GRID,
            uniformity_t: DEFAULT_UNIFORMITY_T,
            k_set: DEFAULT_K_SET.to_vec(),
        }
    }
}

impl DescriptorConfig {
    pub fn full_scale() -> Self {
        Self {
            budgets: Budgets::full(),
            ..Self::default()
        }
    }

    /// Enabled descriptors in schema order, each once.
    pub fn enabled(&self) -> Vec<Descriptor> {
        Descriptor::ALL
            .into_iter()
            .filter(|d| self.descriptors.contains(d))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.descriptors.is_empty() {
            return Err(UtsError::Schema("no descriptors enabled".into()));
        }
        if self.metrics.is_empty() {
            return Err(UtsError::Schema("no metric variants enabled".into()));
        }
        if self.seeds.is_empty() {
            return Err(UtsError::Schema("seed list is empty".into()));
        }
        if self.max_dim > crate::homology::MAX_HOMOLOGY_DIM {
            return Err(UtsError::Capability(format!(
                "homology dimension {} is not supported",
                self.max_dim
            )));
        }
        for d in self.enabled() {
            let b = self.budgets.get(d);
            if b < d.min_budget() {
                return Err(UtsError::Schema(format!(
                    "budget {b} for {} is below its minimum {}",
                    d.name(),
                    d.min_budget()
                )));
            }
        }
        if self.ph_trials == 0 || !(self.ph_alpha > 0.0) {
            return Err(UtsError::Schema("PH dimension needs trials >= 1 and alpha > 0".into()));
        }
        if !(self.fo_alpha > 0.0 && self.fo_alpha < 1.0) {
            return Err(UtsError::Schema("fo_alpha must lie in (0, 1)".into()));
        }
        if self.magnitude_grid < 8 {
            return Err(UtsError::Schema("magnitude_grid must be at least 8".into()));
        }
        if !(self.uniformity_t > 0.0) {
            return Err(UtsError::Schema("uniformity_t must be positive".into()));
        }
        if self.k_set.is_empty() || self.k_set.iter().any(|&k| k < 2) {
            return Err(UtsError::Schema("k_set must be nonempty with every k >= 2".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of everything except the seed list.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seeds.clear();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_budgets_are_a_tenth() {
        let (d, f) = (Budgets::desk(), Budgets::full());
        for x in Descriptor::ALL {
            assert_eq!(d.get(x) * 10, f.get(x));
        }
        assert_eq!(d.ph_dimension, 500);
        assert_eq!(d.twonn, 5_000);
        assert_eq!(d.isoscore, 50_000);
    }

    #[test]
    fn hash_ignores_seeds_only() {
        let a = DescriptorConfig::default();
        let mut b = a.clone();
        b.seeds = vec![9];
        assert_eq!(a.hash(), b.hash());
        b.max_dim = 0;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn validation() {
        assert!(DescriptorConfig::default().validate().is_ok());
        let mut c = DescriptorConfig::default();
        c.budgets.twonn = 2;
        assert!(c.validate().is_err());
        let mut c = DescriptorConfig::default();
        c.max_dim = 3;
        assert!(matches!(c.validate(), Err(UtsError::Capability(_))));
    }
}
