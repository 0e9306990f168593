use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 300, batch: 10, lr_max: 1e-4, lr_min: 0.0, warmup_epochs: 5, momentum: 0.9, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs <= self.warmup_epochs {
            return Err(Error::Config(format!(
                "epochs ({}) must exceed warmup_epochs ({})",
                self.epochs, self.warmup_epochs
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if !(self.lr_min >= 0.0 && self.lr_max >= self.lr_min && self.lr_max.is_finite()) {
            return Err(Error::Config(format!("lr range [{}, {}]", self.lr_min, self.lr_max)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {}", self.momentum)));
        }
        Ok(())
    }
}

/// Linear warm-up to `lr_max` over the first `warmup_epochs`, then cosine
/// annealing that reaches `lr_min` on the final epoch.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let w = cfg.warmup_epochs;
    if epoch < w {
        return cfg.lr_max * (epoch + 1) as f64 / w as f64;
    }
    let span = cfg.epochs.saturating_sub(w + 1);
    if span == 0 {
        return cfg.lr_max;
    }
    let progress = (epoch - w) as f64 / span as f64;
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}
