use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::NUM_CLASSES;

/// Per-class loss weights, in class-index order (no lesion, benign,
/// malignant).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: [f64; NUM_CLASSES],
    /// Sample counts the weights were derived from; `None` for uniform.
    pub counts: Option<[usize; NUM_CLASSES]>,
}

impl ClassWeights {
    /// Plain cross-entropy: every class weighted `1 / C`.
    pub fn uniform() -> Self {
        Self { weights: [1.0 / NUM_CLASSES as f64; NUM_CLASSES], counts: None }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { weights: self.weights.map(|w| w * factor), counts: self.counts }
    }
}

/// Inverse-frequency weights normalized to sum to one:
/// `w_c = (1 / N_c) / Σ_i (1 / N_i)`.
pub fn class_weights(counts: [usize; NUM_CLASSES]) -> Result<ClassWeights> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    let inv = counts.map(|n| 1.0 / n as f64);
    let total: f64 = inv.iter().sum();
    Ok(ClassWeights { weights: inv.map(|v| v / total), counts: Some(counts) })
}

/// The two training strategies that get ensembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Unweighted cross-entropy.
    Natural,
    /// Inverse-frequency class weights from the training fold.
    Inverse,
}

impl Weighting {
    pub const BOTH: [Weighting; 2] = [Weighting::Natural, Weighting::Inverse];

    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::Natural => "natural",
            Weighting::Inverse => "inverse",
        }
    }

    pub fn weights(self, counts: [usize; NUM_CLASSES]) -> Result<ClassWeights> {
        match self {
            Weighting::Natural => Ok(ClassWeights::uniform()),
            Weighting::Inverse => class_weights(counts),
        }
    }
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(Weighting::Natural),
            "inverse" => Ok(Weighting::Inverse),
            other => Err(Error::Config(format!("unknown weighting {other:?}"))),
        }
    }
}
