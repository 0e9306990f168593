//! File-level stages driven by the `mipcls` binary.
//!
//! Every stage reads and writes inside one run directory:
//!
//! ```text
//! run/
//!   blobs/<patient>_<side>.mct (+ .json)   preprocess
//!   folds.json                             split
//!   models/<weighting>/fold<i>/            train
//!   predictions/<weighting>_fold<i>.csv    predict
//!   predictions/ensemble.csv               ensemble
//!   metrics/<name>.json                    evaluate, ensemble
//! ```

mod commands;
mod config;
mod manifest;

pub use commands::{
    blob_path, cmd_augment_preview, cmd_ensemble, cmd_evaluate, cmd_phantom, cmd_predict, cmd_preprocess, cmd_split,
    cmd_train, evaluate_predictions, load_model, model_dir, model_id, predictions_path, FoldRecord, PreprocessReport,
    StudyFailure, BLOB_DIR, ENSEMBLE_CSV, FOLDS_FILE, METRICS_DIR, MODEL_DIR, PREDICTION_DIR,
};
pub use config::PipelineConfig;
pub use manifest::{AuditedLabels, LabelSource, Manifest, ManifestRow};
