//! One-class sparse multiple-kernel fusion regression.
//!
//! Bona fide training frames are mapped onto a constant response of one by
//! kernel regression on an average-fused Gaussian Gram matrix. A lasso path
//! keeps only a handful of support rows per client, and test frames are
//! scored by projecting onto the fitted coefficients. Attacks land away from
//! one.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod featurestore;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod regression;
pub mod scoring;
pub mod synth;

/// Crate version, recorded in model and report provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{OckrError, Result};
pub use featurestore::{read_pack, write_pack, FeaturePack, FeatureRow, Label, RowMeta, ViewId};
pub use kernels::{FusedKernelConfig, KernelMatrix, KernelParams};
pub use metrics::{EvalReport, LabeledScore};
pub use models::{
    load_bundle, save_bundle, Calibration, ClientModel, ModelBundle, Thresholds, TrainOptions,
    TrainingMode, GLOBAL_CLIENT,
};
pub use pipeline::{ScoreLevel, ThresholdMode};
pub use regression::{DenseSolution, FisherDiagnostics, SparseSolution};
pub use scoring::{ScoreRecord, VideoScore};
pub use synth::{SynthPacks, SynthSpec};
