use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LesionClass, NUM_CLASSES};

/// The 90% operating point used for both sensitivity and specificity.
pub const OPERATING_POINT: f64 = 0.9;

// Rates are compared to their floor with this slack so that e.g. 2/3 == 2/3.
const RATE_SLACK: f64 = 1e-12;

fn check_binary(scores: &[f64], positives: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != positives.len() {
        return Err(Error::DimMismatch(format!("{} scores for {} labels", scores.len(), positives.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::DimMismatch("NaN score".into()));
    }
    let pos = positives.iter().filter(|&&p| p).count();
    let neg = positives.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!("{pos} positives, {neg} negatives")));
    }
    Ok((pos, neg))
}

/// Indices sorted by score, ascending.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Mann–Whitney AUC: `(#concordant + ½ #tied) / (#pos · #neg)`.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, positives)?;
    let idx = ascending(scores);
    let mut negatives_below = 0u64;
    let mut twice_concordant = 0u64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0u64, 0u64);
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if positives[idx[j]] {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        twice_concordant += 2 * gp * negatives_below + gp * gn;
        negatives_below += gn;
        i = j;
    }
    Ok(twice_concordant as f64 / (2.0 * pos as f64 * neg as f64))
}

/// One-vs-rest flattening of every (sample, class) pair, then [`roc_auc`].
pub fn roc_auc_micro(probs: &[[f64; NUM_CLASSES]], truths: &[LesionClass]) -> Result<f64> {
    let (scores, labels) = flatten(probs, truths)?;
    roc_auc(&scores, &labels)
}

fn flatten(probs: &[[f64; NUM_CLASSES]], truths: &[LesionClass]) -> Result<(Vec<f64>, Vec<bool>)> {
    if probs.len() != truths.len() {
        return Err(Error::DimMismatch(format!("{} predictions for {} labels", probs.len(), truths.len())));
    }
    let mut scores = Vec::with_capacity(probs.len() * NUM_CLASSES);
    let mut labels = Vec::with_capacity(probs.len() * NUM_CLASSES);
    for (p, t) in probs.iter().zip(truths) {
        for (c, s) in p.iter().enumerate() {
            scores.push(*s);
            labels.push(t.index() == c);
        }
    }
    Ok((scores, labels))
}

/// `(sensitivity, specificity)` at every threshold `score >= τ`, for τ
/// running from +∞ (nothing positive) down through each distinct score.
fn operating_points(scores: &[f64], positives: &[bool], pos: usize, neg: usize) -> Vec<(f64, f64)> {
    let mut idx = ascending(scores);
    idx.reverse();
    let mut out = vec![(0.0, 1.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if positives[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((tp as f64 / pos as f64, (neg - fp) as f64 / neg as f64));
    }
    out
}

/// Highest sensitivity among thresholds whose specificity is at least
/// `spec_floor`.
pub fn sens_at_spec(scores: &[f64], positives: &[bool], spec_floor: f64) -> Result<f64> {
    let (pos, neg) = check_binary(scores, positives)?;
    Ok(operating_points(scores, positives, pos, neg)
        .into_iter()
        .filter(|&(_, spec)| spec + RATE_SLACK >= spec_floor)
        .map(|(sens, _)| sens)
        .fold(0.0, f64::max))
}

/// Highest specificity among thresholds whose sensitivity is at least
/// `sens_floor`.
pub fn spec_at_sens(scores: &[f64], positives: &[bool], sens_floor: f64) -> Result<f64> {
    let (pos, neg) = check_binary(scores, positives)?;
    Ok(operating_points(scores, positives, pos, neg)
        .into_iter()
        .filter(|&(sens, _)| sens + RATE_SLACK >= sens_floor)
        .map(|(_, spec)| spec)
        .fold(0.0, f64::max))
}

/// Leaderboard score: the mean of AUC, sensitivity and specificity.
pub fn overall_score(auc: f64, sens: f64, spec: f64) -> f64 {
    (auc + sens + spec) / 3.0
}

/// Index of the largest probability; ties go to the lower class.
pub fn argmax(p: &[f64; NUM_CLASSES]) -> usize {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if p[c] > p[best] {
            best = c;
        }
    }
    best
}

/// `counts[truth][predicted]` with argmax decisions.
pub fn confusion(probs: &[[f64; NUM_CLASSES]], truths: &[LesionClass]) -> [[usize; NUM_CLASSES]; NUM_CLASSES] {
    let mut m = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (p, t) in probs.iter().zip(truths) {
        m[t.index()][argmax(p)] += 1;
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub auc: f64,
    pub sens_at_90spec: f64,
    pub spec_at_90sens: f64,
}

impl BinaryMetrics {
    fn compute(scores: &[f64], positives: &[bool]) -> Result<Self> {
        Ok(Self {
            auc: roc_auc(scores, positives)?,
            sens_at_90spec: sens_at_spec(scores, positives, OPERATING_POINT)?,
            spec_at_90sens: spec_at_sens(scores, positives, OPERATING_POINT)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    /// Micro (one-vs-rest flattened) AUC.
    pub auc: f64,
    /// Malignant-vs-rest on the malignant probability.
    pub sens_at_90spec: f64,
    pub spec_at_90sens: f64,
    pub score: f64,
    /// Rows are truth, columns the argmax prediction.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub accuracy: f64,
    /// Sensitivity/specificity on the micro-flattened task, for comparison.
    pub micro: BinaryMetrics,
    /// One-vs-rest metrics per class; `None` when the class is absent or is
    /// the only one present.
    pub per_class: BTreeMap<String, Option<BinaryMetrics>>,
}

pub fn evaluate(probs: &[[f64; NUM_CLASSES]], truths: &[LesionClass]) -> Result<MetricsReport> {
    let (flat_scores, flat_labels) = flatten(probs, truths)?;
    let micro = BinaryMetrics::compute(&flat_scores, &flat_labels)?;

    let mut per_class = BTreeMap::new();
    let mut malignant = None;
    for class in LesionClass::ALL {
        let c = class.index();
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let labels: Vec<bool> = truths.iter().map(|t| *t == class).collect();
        let m = match BinaryMetrics::compute(&scores, &labels) {
            Ok(m) => Some(m),
            Err(Error::DegenerateLabels(_)) => None,
            Err(e) => return Err(e),
        };
        if class == LesionClass::Malignant {
            malignant = m;
        }
        per_class.insert(class.as_str().to_string(), m);
    }
    let malignant = malignant
        .ok_or_else(|| Error::DegenerateLabels("malignant-vs-rest needs both malignant and other samples".into()))?;
    let confusion = confusion(probs, truths);
    let correct: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        n: probs.len(),
        auc: micro.auc,
        sens_at_90spec: malignant.sens_at_90spec,
        spec_at_90sens: malignant.spec_at_90sens,
        score: overall_score(micro.auc, malignant.sens_at_90spec, malignant.spec_at_90sens),
        confusion,
        accuracy: correct as f64 / probs.len() as f64,
        micro,
        per_class,
    })
}
