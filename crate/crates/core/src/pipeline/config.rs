use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentPolicy;
use crate::classhead::{TrainConfig, DEFAULT_GRID};
use crate::error::{Error, Result};
use crate::mipbuild::{NormConstants, StackConfig};
use crate::phantom::PhantomConfig;

/// Everything the stages need besides their input files. Every field has a
/// default, so an empty TOML file is a valid config.
///
/// `train.seed` is not used directly: each fold trains with a seed derived
/// from the top-level `seed` and the fold index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub k: usize,
    pub feature_grid: usize,
    /// Augmented copies of each training stack; 0 trains on the stacks as is.
    pub augment_views: usize,
    pub stack: StackConfig,
    pub norm: NormConstants,
    pub augment: AugmentPolicy,
    pub train: TrainConfig,
    pub phantom: PhantomConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 5,
            feature_grid: DEFAULT_GRID,
            augment_views: 0,
            stack: StackConfig::default(),
            norm: NormConstants::default(),
            augment: AugmentPolicy::default(),
            train: TrainConfig::default(),
            phantom: PhantomConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("k must be >= 2, got {}", self.k)));
        }
        if self.feature_grid == 0 {
            return Err(Error::Config("feature_grid must be >= 1".into()));
        }
        let s = &self.stack;
        if s.spacing.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::Config(format!("spacing {:?}", s.spacing)));
        }
        if s.shape.contains(&0) || s.row_window == 0 {
            return Err(Error::Config(format!("shape {:?}, row window {}", s.shape, s.row_window)));
        }
        if s.row_window > s.shape[crate::geometry::HEIGHT_AXIS] {
            return Err(Error::Config(format!(
                "row window {} exceeds height {}",
                s.row_window,
                s.shape[crate::geometry::HEIGHT_AXIS]
            )));
        }
        self.norm.validate()?;
        self.augment.validate()?;
        self.train.validate()
    }
}
