use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::manifest::{LabelSource, Manifest, ManifestRow};
use crate::augment::{augment, AppliedTransform, AugmentPolicy};
use crate::classhead::{extract_features, forward, train_head, HeadParams, TrainConfig, TrainingSet, Weighting};
use crate::error::{Error, Result};
use crate::evalkit::{ensemble, evaluate, read_predictions, stratified_kfold, write_predictions, FoldPlan};
use crate::evalkit::{MetricsReport, Prediction};
use crate::labels::{LesionClass, Side, NUM_CLASSES};
use crate::mipbuild::{build_stacks, normalize_stack, MipStack};
use crate::phantom::{write_phantom_set, PhantomConfig};
use crate::rng::{sample_seed, splitmix64};
use crate::tensorio::{atomic_write, read_blob, write_blob, TensorBlob};

pub const BLOB_DIR: &str = "blobs";
pub const FOLDS_FILE: &str = "folds.json";
pub const MODEL_DIR: &str = "models";
pub const PREDICTION_DIR: &str = "predictions";
pub const METRICS_DIR: &str = "metrics";
pub const ENSEMBLE_CSV: &str = "ensemble.csv";
const BLOB_EXT: &str = "mct";

pub fn blob_path(run: &Path, patient: &str, side: Side) -> PathBuf {
    run.join(BLOB_DIR).join(format!("{patient}_{}.{BLOB_EXT}", side.as_str()))
}

pub fn model_dir(run: &Path, weighting: Weighting, fold: usize) -> PathBuf {
    run.join(MODEL_DIR).join(weighting.as_str()).join(format!("fold{fold}"))
}

pub fn model_id(weighting: Weighting, fold: usize) -> String {
    format!("{}_fold{fold}", weighting.as_str())
}

pub fn predictions_path(run: &Path, name: &str) -> PathBuf {
    run.join(PREDICTION_DIR).join(format!("{name}.csv"))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_stack(run: &Path, patient: &str, side: Side) -> Result<MipStack> {
    let path = blob_path(run, patient, side);
    if !path.exists() {
        return Err(Error::MissingBlob(path));
    }
    MipStack::from_blob(&read_blob(&path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyFailure {
    pub patient_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub written: Vec<String>,
    pub failures: Vec<StudyFailure>,
}

impl PreprocessReport {
    pub fn is_clean(&self) -> bool {
        self.failures.is_empty()
    }
}

fn preprocess_study(manifest: &Manifest, row: &ManifestRow, cfg: &PipelineConfig, run: &Path) -> Result<Vec<String>> {
    let study = manifest.load_study(row)?;
    let mut written = Vec::with_capacity(2);
    for stack in build_stacks(&study, &cfg.stack)? {
        let normalized = normalize_stack(&stack, &cfg.norm)?;
        let path = blob_path(run, &row.patient_id, stack.side);
        write_blob(&normalized.to_blob()?, &path)?;
        written.push(format!("{BLOB_DIR}/{}", path.file_name().unwrap_or_default().to_string_lossy()));
    }
    Ok(written)
}

/// One normalized stack blob per breast under `run/blobs`. A study that
/// fails is skipped and reported; the others still complete. The report is
/// also written to `run/preprocess_report.json`.
pub fn cmd_preprocess(manifest: &Manifest, cfg: &PipelineConfig, run: &Path, jobs: usize) -> Result<PreprocessReport> {
    cfg.validate()?;
    create_dir(&run.join(BLOB_DIR))?;
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<(String, Result<Vec<String>>)> = pool.install(|| {
        manifest
            .rows()
            .par_iter()
            .map(|row| (row.patient_id.clone(), preprocess_study(manifest, row, cfg, run)))
            .collect()
    });
    let mut report = PreprocessReport::default();
    for (patient_id, result) in results {
        match result {
            Ok(paths) => report.written.extend(paths),
            Err(e) => {
                warn!("{patient_id}: {e}");
                report.failures.push(StudyFailure { patient_id, error: e.to_string() });
            }
        }
    }
    info!("preprocess: {} blobs written, {} studies failed", report.written.len(), report.failures.len());
    write_json(&report, &run.join("preprocess_report.json"))?;
    Ok(report)
}

/// Patient-level stratified folds, validated before `run/folds.json` is
/// written.
pub fn cmd_split(manifest: &Manifest, k: usize, seed: u64, run: &Path) -> Result<FoldPlan> {
    let plan = stratified_kfold(&manifest.stratification(), k, seed)?;
    plan.validate()?;
    create_dir(run)?;
    write_json(&plan, &run.join(FOLDS_FILE))?;
    Ok(plan)
}

/// What a trained fold model was fit on, stored next to its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub model_id: String,
    pub weighting: Weighting,
    pub fold: usize,
    pub k: usize,
    pub feature_grid: usize,
    pub augment_views: usize,
    pub train: TrainConfig,
    pub train_patients: Vec<String>,
    /// Per-class sample (breast) counts of the training fold.
    pub class_counts: [usize; NUM_CLASSES],
    pub class_weights: [f64; NUM_CLASSES],
    pub loss_trace: Vec<f64>,
}

fn feature_views(stack: &MipStack, patient: &str, cfg: &PipelineConfig) -> Result<Vec<Vec<f32>>> {
    let mut views = vec![extract_features(stack, cfg.feature_grid)?.0];
    for v in 0..cfg.augment_views {
        let seed = sample_seed(cfg.seed, patient, stack.side, v as u64);
        let (aug, _) = augment(stack, seed, &cfg.augment);
        views.push(extract_features(&aug, cfg.feature_grid)?.0);
    }
    Ok(views)
}

fn save_model(params: &HeadParams, dir: &Path) -> Result<()> {
    let w: Vec<f32> = params.weights.iter().map(|&x| x as f32).collect();
    let b: Vec<f32> = params.bias.iter().map(|&x| x as f32).collect();
    write_blob(&TensorBlob::f32(vec![params.dim as u32, NUM_CLASSES as u32], w)?, dir.join("W.mct"))?;
    write_blob(&TensorBlob::f32(vec![NUM_CLASSES as u32], b)?, dir.join("b.mct"))
}

pub fn load_model(run: &Path, weighting: Weighting, fold: usize) -> Result<HeadParams> {
    let dir = model_dir(run, weighting, fold);
    let read = |name: &str| {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::MissingBlob(path));
        }
        read_blob(&path)
    };
    let w = read("W.mct")?;
    let b = read("b.mct")?;
    let (Some(wd), Some(bd)) = (w.data.as_f32(), b.data.as_f32()) else {
        return Err(Error::SchemaMismatch("model parameters must be f32".into()));
    };
    if w.dims.len() != 2 || w.dims[1] as usize != NUM_CLASSES || b.dims != [NUM_CLASSES as u32] {
        return Err(Error::SchemaMismatch(format!("model dims {:?} / {:?}", w.dims, b.dims)));
    }
    let params = HeadParams {
        dim: w.dims[0] as usize,
        weights: wd.iter().map(|&x| f64::from(x)).collect(),
        bias: [f64::from(bd[0]), f64::from(bd[1]), f64::from(bd[2])],
    };
    params.check()?;
    Ok(params)
}

fn read_plan(run: &Path) -> Result<FoldPlan> {
    let plan: FoldPlan = read_json(&run.join(FOLDS_FILE))?;
    plan.validate()?;
    Ok(plan)
}

/// Trains one model per requested fold (all folds when `folds` is empty).
/// Labels are requested only for the fold's training patients, and inverse
/// class weights come from those training counts alone.
pub fn cmd_train(
    labels: &dyn LabelSource,
    cfg: &PipelineConfig,
    run: &Path,
    weighting: Weighting,
    folds: &[usize],
) -> Result<Vec<FoldRecord>> {
    cfg.validate()?;
    let plan = read_plan(run)?;
    let folds: Vec<usize> = if folds.is_empty() { (0..plan.k).collect() } else { folds.to_vec() };
    let mut records = Vec::with_capacity(folds.len());
    for fold in folds {
        if fold >= plan.k {
            return Err(Error::Config(format!("fold {fold} out of range for k = {}", plan.k)));
        }
        let train_patients: Vec<String> = plan.training(fold).into_iter().map(String::from).collect();
        let mut views = Vec::new();
        let mut ys = Vec::new();
        for p in &train_patients {
            for side in Side::BOTH {
                let stack = load_stack(run, p, side)?;
                let y = labels
                    .label(p, side)
                    .ok_or_else(|| Error::ManifestParse(format!("no label for {p} {}", side.as_str())))?;
                views.push(feature_views(&stack, p, cfg)?);
                ys.push(y);
            }
        }
        let data = TrainingSet::with_views(views, ys)?;
        let counts = data.class_counts();
        let cw = weighting.weights(counts)?;
        let train = TrainConfig { seed: splitmix64(cfg.seed ^ splitmix64(fold as u64 + 1)), ..cfg.train };
        let outcome = train_head(&data, &train, &cw)?;
        let id = model_id(weighting, fold);
        info!(
            "{id}: {} samples, counts {counts:?}, final loss {:.5}",
            data.len(),
            outcome.loss_trace.last().copied().unwrap_or(f64::NAN)
        );
        let dir = model_dir(run, weighting, fold);
        create_dir(&dir)?;
        save_model(&outcome.params, &dir)?;
        let record = FoldRecord {
            model_id: id,
            weighting,
            fold,
            k: plan.k,
            feature_grid: cfg.feature_grid,
            augment_views: cfg.augment_views,
            train,
            train_patients,
            class_counts: counts,
            class_weights: cw.weights,
            loss_trace: outcome.loss_trace,
        };
        write_json(&record, &dir.join("record.json"))?;
        records.push(record);
    }
    Ok(records)
}

/// `(patient, side)` pairs with a blob in `run/blobs`, sorted.
fn all_blobs(run: &Path) -> Result<Vec<(String, Side)>> {
    let dir = run.join(BLOB_DIR);
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(BLOB_EXT) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if let Some((patient, side)) = stem.rsplit_once('_') {
            if let Ok(side) = side.parse::<Side>() {
                out.push((patient.to_string(), side));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Probabilities from fold model `(weighting, fold)`, on that fold's
/// validation patients or, with `all`, on every blob in the run. Written to
/// `run/predictions/<model_id>.csv` (`<model_id>_all.csv` with `all`).
pub fn cmd_predict(
    cfg: &PipelineConfig,
    run: &Path,
    weighting: Weighting,
    fold: usize,
    all: bool,
) -> Result<(PathBuf, Vec<Prediction>)> {
    let params = load_model(run, weighting, fold)?;
    let targets: Vec<(String, Side)> = if all {
        all_blobs(run)?
    } else {
        read_plan(run)?.validation(fold).into_iter().flat_map(|p| Side::BOTH.map(|s| (p.to_string(), s))).collect()
    };
    let id = model_id(weighting, fold);
    let mut preds = Vec::with_capacity(targets.len());
    for (patient, side) in targets {
        let stack = load_stack(run, &patient, side)?;
        let f = extract_features(&stack, cfg.feature_grid)?;
        preds.push(Prediction {
            probs: forward(f.as_slice(), &params)?,
            patient_id: patient,
            side,
            model_id: id.clone(),
        });
    }
    let name = if all { format!("{id}_all") } else { id };
    let path = predictions_path(run, &name);
    create_dir(&run.join(PREDICTION_DIR))?;
    write_predictions(&preds, &path)?;
    Ok((path, preds))
}

/// Metrics for a set of predictions against the label source.
pub fn evaluate_predictions(labels: &dyn LabelSource, preds: &[Prediction]) -> Result<MetricsReport> {
    let mut probs = Vec::with_capacity(preds.len());
    let mut truths: Vec<LesionClass> = Vec::with_capacity(preds.len());
    for p in preds {
        let y = labels
            .label(&p.patient_id, p.side)
            .ok_or_else(|| Error::SchemaMismatch(format!("prediction for unknown patient {:?}", p.patient_id)))?;
        probs.push(p.probs);
        truths.push(y);
    }
    evaluate(&probs, &truths)
}

/// Reads a predictions CSV, evaluates it and writes the report to `out`.
pub fn cmd_evaluate(labels: &dyn LabelSource, predictions: &Path, out: &Path) -> Result<MetricsReport> {
    let report = evaluate_predictions(labels, &read_predictions(predictions)?)?;
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    write_json(&report, out)?;
    Ok(report)
}

/// Averages the listed prediction files per `(patient, side)` and writes
/// the result to `out`.
pub fn cmd_ensemble(inputs: &[PathBuf], out: &Path) -> Result<Vec<Prediction>> {
    if inputs.is_empty() {
        return Err(Error::EmptyGroup("no prediction files given".into()));
    }
    let mut all = Vec::new();
    for path in inputs {
        all.extend(read_predictions(path)?);
    }
    let merged = ensemble(&all)?;
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    write_predictions(&merged, out)?;
    Ok(merged)
}

pub fn cmd_phantom(n: usize, seed: u64, cfg: &PhantomConfig, out: &Path) -> Result<PathBuf> {
    let manifest = write_phantom_set(n, seed, cfg, out)?;
    info!("phantom: {n} studies, manifest at {}", manifest.display());
    Ok(manifest)
}

/// Writes `before.mct`, `after.mct` and `transforms.json` for one stack
/// blob so an augmentation policy can be inspected.
pub fn cmd_augment_preview(
    blob: &Path,
    seed: u64,
    policy: &AugmentPolicy,
    out: &Path,
) -> Result<Vec<AppliedTransform>> {
    policy.validate()?;
    let stack = MipStack::from_blob(&read_blob(blob)?)?;
    let (aug, applied) = augment(&stack, seed, policy);
    create_dir(out)?;
    write_blob(&stack.to_blob()?, out.join("before.mct"))?;
    write_blob(&aug.to_blob()?, out.join("after.mct"))?;
    write_json(&applied, &out.join("transforms.json"))?;
    Ok(applied)
}
