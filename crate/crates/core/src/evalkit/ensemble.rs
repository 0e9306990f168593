use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Side, NUM_CLASSES};
use crate::tensorio::atomic_write;

pub const ENSEMBLE_MODEL_ID: &str = "ensemble";

/// One model's class probabilities for one breast.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub patient_id: String,
    pub side: Side,
    pub probs: [f64; NUM_CLASSES],
    pub model_id: String,
}

/// Arithmetic mean of the members' probability vectors.
pub fn ensemble_group(members: &[[f64; NUM_CLASSES]]) -> Result<[f64; NUM_CLASSES]> {
    if members.is_empty() {
        return Err(Error::EmptyGroup("ensemble".into()));
    }
    // Sum in a canonical order so the result does not depend on member order.
    let mut sorted = members.to_vec();
    sorted.sort_by(|a, b| {
        a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = [0.0; NUM_CLASSES];
    for m in &sorted {
        for (o, v) in out.iter_mut().zip(m) {
            *o += v;
        }
    }
    Ok(out.map(|v| v / members.len() as f64))
}

/// Averages all predictions per (patient, side). Output is sorted by
/// patient then side and tagged with the `ensemble` model id.
pub fn ensemble(preds: &[Prediction]) -> Result<Vec<Prediction>> {
    let mut groups: BTreeMap<(&str, Side), Vec<[f64; NUM_CLASSES]>> = BTreeMap::new();
    for p in preds {
        groups.entry((p.patient_id.as_str(), p.side)).or_default().push(p.probs);
    }
    groups
        .into_iter()
        .map(|((patient, side), members)| {
            Ok(Prediction {
                patient_id: patient.to_string(),
                side,
                probs: ensemble_group(&members).map_err(|_| Error::EmptyGroup(format!("{patient}/{side}")))?,
                model_id: ENSEMBLE_MODEL_ID.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    patient_id: String,
    side: Side,
    p_nolesion: f64,
    p_benign: f64,
    p_malignant: f64,
    model_id: String,
}

const HEADER: [&str; 6] = ["patient_id", "side", "p_nolesion", "p_benign", "p_malignant", "model_id"];

pub fn write_predictions(preds: &[Prediction], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in preds {
        w.serialize(PredictionRow {
            patient_id: p.patient_id.clone(),
            side: p.side,
            p_nolesion: p.probs[0],
            p_benign: p.probs[1],
            p_malignant: p.probs[2],
            model_id: p.model_id.clone(),
        })?;
    }
    if preds.is_empty() {
        w.write_record(HEADER)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path.as_ref(), e.into_error()))?;
    atomic_write(path.as_ref(), &bytes)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::SchemaMismatch(format!("{}: expected header {}", path.display(), HEADER.join(","))));
    }
    let mut out = Vec::new();
    for row in r.deserialize::<PredictionRow>() {
        let row = row.map_err(|e| Error::SchemaMismatch(format!("{}: {e}", path.display())))?;
        let probs = [row.p_nolesion, row.p_benign, row.p_malignant];
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::SchemaMismatch(format!(
                "{}: probabilities {probs:?} for {} are not on the simplex",
                path.display(),
                row.patient_id
            )));
        }
        out.push(Prediction { patient_id: row.patient_id, side: row.side, probs, model_id: row.model_id });
    }
    Ok(out)
}
