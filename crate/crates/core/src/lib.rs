//! Mask-guided multi-channel MIP classification for breast DCE-MRI.
//!
//! The crate covers the whole desk-scale pipeline: NIfTI ingestion and
//! geometric standardization ([`geometry`]), four-channel MIP stacks
//! ([`mipbuild`]), seeded augmentation ([`augment`]), the class-weighted
//! linear head ([`classhead`]), cross-validation, metrics and ensembling
//! ([`evalkit`]) and the file-level commands the CLI drives ([`pipeline`]).

pub mod augment;
pub mod classhead;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod labels;
pub mod mipbuild;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod tensorio;
pub mod volume;

pub use classhead::{ClassWeights, FeatureVector, HeadParams, LossValue, TrainConfig, Weighting};
pub use error::{Error, Result};
pub use evalkit::{FoldPlan, MetricsReport, Prediction};
pub use labels::{LesionClass, Side};
pub use mipbuild::{MipStack, NormConstants, Study};
pub use volume::Volume;
