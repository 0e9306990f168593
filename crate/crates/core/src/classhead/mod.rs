//! Pooled-feature linear head trained with (optionally) inverse-frequency
//! weighted cross-entropy under a warm-up + cosine learning-rate schedule.

mod features;
mod head;
mod schedule;
mod train;
mod weights;

pub use features::{extract_features, feature_dim, FeatureVector, DEFAULT_GRID};
pub use head::{forward, grad_weighted_ce, logits, softmax, weighted_ce, Gradients, HeadParams, LossValue, LOG_FLOOR};
pub use schedule::{lr_schedule, TrainConfig};
pub use train::{train_head, TrainOutcome, TrainingSet};
pub use weights::{class_weights, ClassWeights, Weighting};
