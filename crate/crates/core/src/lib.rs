//! Out-of-distribution detection toolkit.
//!
//! The crate trains image classifiers that stay uncertain on inputs whose
//! class-defining content has been destroyed, and scores test inputs for
//! OOD-ness with a family of softmax-based postprocessors.
//!
//! The pieces fit together as follows:
//!
//! - [`feature`] — per-sample feature standardization with a fixed-norm
//!   guarantee, the bottleneck the training objective relies on.
//! - [`loss`] — the joint objective: cross-entropy on in-distribution data
//!   plus a KL-to-uniform uncertainty term on synthesized outliers.
//! - [`schedule`] — the perturbation-strength schedule used during training.
//! - [`synthesis`] — virtual outlier construction from saliency gradients:
//!   percentile masking, gradient addition/subtraction, pixel shuffling,
//!   Gaussian noise.
//! - [`model`] — a small convolutional classifier with explicit backward
//!   passes for both parameters and inputs.
//! - [`train`] — the joint training loop and its cross-entropy-only baseline.
//! - [`postprocess`] — MSP, temperature scaling, energy, ODIN and its
//!   selectively-perturbed variants.
//! - [`metrics`] — AUROC and FPR@TPR evaluation plus report files.
//! - [`data`] — image-folder ingestion and a synthetic spurious-correlation
//!   benchmark generator.
//!
//! All numeric code is generic over the scalar type via [`num::Float`];
//! `f32` is the default pipeline scalar and `f64` is used where tests need
//! headroom.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod feature;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod num;
pub mod postprocess;
pub mod schedule;
pub mod synthesis;
#[cfg(test)]
pub(crate) mod test_support;
pub mod train;

pub use error::{Error, Result};
pub use num::Float;

/// Default scalar for training pipelines and the CLI.
pub type PipelineFloat = f32;

/// Classifier instantiated at the pipeline scalar.
pub type PipelineClassifier = model::Classifier<PipelineFloat>;

/// Image batch instantiated at the pipeline scalar.
pub type PipelineImageBatch = image::ImageBatch<PipelineFloat>;
