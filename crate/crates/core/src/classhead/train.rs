use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::head::{grad_weighted_ce, HeadParams};
use super::schedule::{lr_schedule, TrainConfig};
use super::weights::ClassWeights;
use crate::error::{Error, Result};
use crate::labels::LesionClass;
use crate::rng::stream_rng;

/// Training samples, each with one or more feature views. Epoch `e` uses
/// view `e % views` of every sample.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    views: Vec<Vec<Vec<f32>>>,
    labels: Vec<LesionClass>,
    dim: usize,
}

impl TrainingSet {
    pub fn new(features: Vec<Vec<f32>>, labels: Vec<LesionClass>) -> Result<Self> {
        Self::with_views(features.into_iter().map(|f| vec![f]).collect(), labels)
    }

    pub fn with_views(views: Vec<Vec<Vec<f32>>>, labels: Vec<LesionClass>) -> Result<Self> {
        if views.is_empty() || views.len() != labels.len() {
            return Err(Error::DimMismatch(format!("{} samples for {} labels", views.len(), labels.len())));
        }
        let dim = views[0].first().map(Vec::len).unwrap_or(0);
        if views.iter().any(|v| v.is_empty() || v.iter().any(|f| f.len() != dim)) {
            return Err(Error::DimMismatch("inconsistent feature views".into()));
        }
        Ok(Self { views, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[LesionClass] {
        &self.labels
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for l in &self.labels {
            counts[l.index()] += 1;
        }
        counts
    }

    fn view(&self, sample: usize, epoch: usize) -> &[f32] {
        let v = &self.views[sample];
        &v[epoch % v.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: HeadParams,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch SGD with heavy-ball momentum (`v ← μ v + g; θ ← θ − lr v`)
/// from a zero initialization. Batch order is reshuffled each epoch from
/// ChaCha8 stream `epoch` of `cfg.seed`.
pub fn train_head(data: &TrainingSet, cfg: &TrainConfig, cw: &ClassWeights) -> Result<TrainOutcome> {
    train_head_from(data, cfg, cw, HeadParams::zeros(data.dim()))
}

pub(crate) fn train_head_from(
    data: &TrainingSet,
    cfg: &TrainConfig,
    cw: &ClassWeights,
    init: HeadParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if init.dim != data.dim() {
        return Err(Error::DimMismatch(format!("head dim {} vs features {}", init.dim, data.dim())));
    }
    let mut params = init;
    let mut vel_w = vec![0.0; params.weights.len()];
    let mut vel_b = [0.0; 3];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let feats: Vec<&[f32]> = batch.iter().map(|&i| data.view(i, epoch)).collect();
            let labels: Vec<LesionClass> = batch.iter().map(|&i| data.labels[i]).collect();
            let g = grad_weighted_ce(&feats, &labels, &params, cw)?;
            epoch_loss += g.loss.value * batch.len() as f64;
            for ((p, v), gw) in params.weights.iter_mut().zip(vel_w.iter_mut()).zip(&g.weights) {
                *v = cfg.momentum * *v + gw;
                *p -= lr * *v;
            }
            for ((p, v), gb) in params.bias.iter_mut().zip(vel_b.iter_mut()).zip(&g.bias) {
                *v = cfg.momentum * *v + gb;
                *p -= lr * *v;
            }
        }
        loss_trace.push(epoch_loss / data.len() as f64);
    }
    params.check()?;
    Ok(TrainOutcome { params, loss_trace })
}
