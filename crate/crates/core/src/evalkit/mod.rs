//! Patient-level stratified folds, challenge metrics and probability
//! ensembling.

mod ensemble;
mod folds;
mod metrics;

pub use ensemble::{ensemble, ensemble_group, read_predictions, write_predictions, Prediction};
pub use folds::{max_label, stratified_kfold, FoldPlan};
pub use metrics::{
    argmax, confusion, evaluate, overall_score, roc_auc, roc_auc_micro, sens_at_spec, spec_at_sens, BinaryMetrics,
    MetricsReport, OPERATING_POINT,
};
