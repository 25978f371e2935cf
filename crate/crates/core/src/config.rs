//! Augmentation settings, read from TOML.
//!
//! Every key is optional; omitted keys take the defaults below.
//!
//! ```toml
//! strategy = "instance_balanced"   # most_similar | baseline_map | cooccurrence | random_paste
//! top_n = 3
//! metric = "cosine"                # or "euclidean"
//! average_similarity = false
//! scale_range = [0.05, 0.40]       # paste width as a fraction of host width
//! area_bounds = [300.0, 90000.0]   # paste area in pixels
//! epsilon_frac = 0.05
//! objects_per_image = 1
//! blending = "none"                # gaussian_5x5 | averaging_5x5
//! visibility_threshold = 0.05
//! max_retries = 20
//! counter_init = "zero"            # or "dataset_frequency"
//! seed = 0
//! epoch = 0
//! probability = 1.0
//! embedding_path = "glove.6B.300d.txt"
//! embedding_dim = 300
//! ap_table = "ap.json"             # baseline_map only
//!
//! [substitutions]
//! "hair drier" = "hairdryer"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentParams;
use crate::compositor::{Blending, PlacementParams};
use crate::embedding::SimilarityMetric;
use crate::error::{Error, Result};
use crate::matcher::{SelectionStrategy, StrategyKind};

/// Environment variable that overrides `embedding_path`.
pub const EMBEDDINGS_ENV: &str = "SEMPASTE_EMBEDDINGS";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterInit {
    #[default]
    Zero,
    DatasetFrequency,
}

impl std::str::FromStr for CounterInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(CounterInit::Zero),
            "dataset_frequency" => Ok(CounterInit::DatasetFrequency),
            other => Err(Error::InvalidArgument(format!("unknown counter_init {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub strategy: StrategyKind,
    pub top_n: usize,
    pub metric: SimilarityMetric,
    pub average_similarity: bool,
    pub scale_range: [f64; 2],
    pub area_bounds: [f64; 2],
    pub epsilon_frac: f64,
    pub objects_per_image: usize,
    pub blending: Blending,
    pub visibility_threshold: f64,
    pub max_retries: u32,
    pub counter_init: CounterInit,
    pub seed: u64,
    /// Epoch index of this run; one invocation is one epoch.
    pub epoch: u64,
    /// Chance that an image is augmented at all.
    pub probability: f64,
    pub embedding_path: Option<PathBuf>,
    pub embedding_dim: Option<usize>,
    pub substitutions: BTreeMap<String, String>,
    /// JSON object of per-category AP, for `baseline_map`.
    pub ap_table: Option<PathBuf>,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        let p = PlacementParams::default();
        AugmentationConfig {
            strategy: StrategyKind::InstanceBalanced,
            top_n: 3,
            metric: SimilarityMetric::Cosine,
            average_similarity: false,
            scale_range: [p.scale_lo, p.scale_hi],
            area_bounds: [p.area_min, p.area_max],
            epsilon_frac: p.epsilon_frac,
            objects_per_image: 1,
            blending: p.blending,
            visibility_threshold: p.visibility_threshold,
            max_retries: p.max_retries,
            counter_init: CounterInit::Zero,
            seed: 0,
            epoch: 0,
            probability: 1.0,
            embedding_path: None,
            embedding_dim: None,
            substitutions: BTreeMap::new(),
            ap_table: None,
        }
    }
}

impl AugmentationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn placement_params(&self) -> PlacementParams {
        PlacementParams {
            scale_lo: self.scale_range[0],
            scale_hi: self.scale_range[1],
            area_min: self.area_bounds[0],
            area_max: self.area_bounds[1],
            epsilon_frac: self.epsilon_frac,
            max_retries: self.max_retries,
            blending: self.blending,
            visibility_threshold: self.visibility_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.placement_params().validate()?;
        if self.top_n == 0 {
            return Err(Error::Config("top_n must be at least 1".into()));
        }
        if self.objects_per_image == 0 {
            return Err(Error::Config("objects_per_image must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config("probability must lie in [0, 1]".into()));
        }
        if self.strategy == StrategyKind::BaselineMap && self.ap_table.is_none() {
            return Err(Error::Config("baseline_map needs ap_table".into()));
        }
        Ok(())
    }

    /// Embedding file: the environment override, else `embedding_path`.
    pub fn resolved_embedding_path(&self) -> Option<PathBuf> {
        std::env::var_os(EMBEDDINGS_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .or_else(|| self.embedding_path.clone())
    }

    /// Hex SHA-256 of the canonical JSON form of this config.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config always serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Selection strategy without its auxiliary tables.
    pub fn strategy(&self) -> SelectionStrategy {
        SelectionStrategy::new(self.strategy, self.top_n).averaged(self.average_similarity)
    }

    pub fn augment_params(&self, strategy: SelectionStrategy) -> AugmentParams {
        AugmentParams {
            strategy,
            metric: self.metric,
            placement: self.placement_params(),
            objects_per_image: self.objects_per_image,
        }
    }
}

/// Read a per-category AP table: a JSON object of label to AP.
pub fn load_ap_table(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
