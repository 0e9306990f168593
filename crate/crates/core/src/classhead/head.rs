use serde::{Deserialize, Serialize};

use super::weights::ClassWeights;
use crate::error::{Error, Result};
use crate::labels::{LesionClass, NUM_CLASSES};

/// Probabilities are floored here before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Linear layer from a `dim`-feature vector to three logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub dim: usize,
    /// `dim × 3`, row-major: `weights[d * 3 + c]`.
    pub weights: Vec<f64>,
    pub bias: [f64; NUM_CLASSES],
}

impl HeadParams {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, weights: vec![0.0; dim * NUM_CLASSES], bias: [0.0; NUM_CLASSES] }
    }

    pub fn check(&self) -> Result<()> {
        if self.weights.len() != self.dim * NUM_CLASSES {
            return Err(Error::DimMismatch(format!("{} weights for dim {}", self.weights.len(), self.dim)));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::DimMismatch("non-finite head parameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<f64>,
    pub bias: [f64; NUM_CLASSES],
    pub loss: LossValue,
}

fn check_dim(f: &[f32], p: &HeadParams) -> Result<()> {
    if f.len() != p.dim || p.weights.len() != p.dim * NUM_CLASSES {
        return Err(Error::DimMismatch(format!("feature length {} vs head dim {}", f.len(), p.dim)));
    }
    Ok(())
}

pub fn logits(f: &[f32], p: &HeadParams) -> Result<[f64; NUM_CLASSES]> {
    check_dim(f, p)?;
    let mut z = p.bias;
    for (d, &x) in f.iter().enumerate() {
        let x = f64::from(x);
        let row = &p.weights[d * NUM_CLASSES..(d + 1) * NUM_CLASSES];
        for (zc, w) in z.iter_mut().zip(row) {
            *zc += w * x;
        }
    }
    Ok(z)
}

/// Max-subtracted softmax.
pub fn softmax(z: [f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

pub fn forward(f: &[f32], p: &HeadParams) -> Result<[f64; NUM_CLASSES]> {
    Ok(softmax(logits(f, p)?))
}

/// `-(1/N) Σ_i w_{y_i} log(max(p_{i, y_i}, 1e-12))`.
pub fn weighted_ce(probs: &[[f64; NUM_CLASSES]], labels: &[LesionClass], cw: &ClassWeights) -> Result<LossValue> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::DimMismatch(format!("{} probability rows for {} labels", probs.len(), labels.len())));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, y)| {
            let c = y.index();
            -cw.weights[c] * p[c].max(LOG_FLOOR).ln()
        })
        .sum();
    Ok(LossValue { value: total / probs.len() as f64, n: probs.len() })
}

/// Loss and its gradient for a batch. With `dz_i = w_{y_i} (p_i − e_{y_i}) / N`:
/// `dW = Σ_i f_i dz_iᵀ` and `db = Σ_i dz_i`, summed in sample order.
pub fn grad_weighted_ce<F: AsRef<[f32]>>(
    features: &[F],
    labels: &[LesionClass],
    p: &HeadParams,
    cw: &ClassWeights,
) -> Result<Gradients> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::DimMismatch(format!("{} feature rows for {} labels", features.len(), labels.len())));
    }
    let n = features.len() as f64;
    let mut g = Gradients {
        weights: vec![0.0; p.weights.len()],
        bias: [0.0; NUM_CLASSES],
        loss: LossValue { value: 0.0, n: features.len() },
    };
    for (f, y) in features.iter().zip(labels) {
        let f = f.as_ref();
        let probs = forward(f, p)?;
        let c = y.index();
        let w = cw.weights[c];
        g.loss.value -= w * probs[c].max(LOG_FLOOR).ln();
        let mut dz = probs;
        dz[c] -= 1.0;
        let dz = dz.map(|v| w * v / n);
        for (b, d) in g.bias.iter_mut().zip(&dz) {
            *b += d;
        }
        for (d, &x) in f.iter().enumerate() {
            let x = f64::from(x);
            let row = &mut g.weights[d * NUM_CLASSES..(d + 1) * NUM_CLASSES];
            for (gw, dzc) in row.iter_mut().zip(&dz) {
                *gw += x * dzc;
            }
        }
    }
    g.loss.value /= n;
    Ok(g)
}
