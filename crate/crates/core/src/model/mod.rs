//! Classifier contract: feature extractor, standardized-feature bottleneck,
//! and linear head, with explicit backward passes.

pub mod backbone;
mod classifier;
pub mod layers;

pub use backbone::{BackboneSpec, ConvNet};
pub use classifier::{
    Classifier, ClassifierCache, ClassifierConfig, ClassifierGrads, DifferentiableModel,
    FeatureMode, ForwardOutput, Model,
};
