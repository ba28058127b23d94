//! Checkpoints: model weights plus the configuration and run metadata needed
//! to reconstruct and continue a run. JSON with a format version field.

use std::path::Path;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::config::SynthesisSpec;
use crate::error::{Error, Result};
use crate::model::{Classifier, ClassifierConfig};
use crate::num::Float;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Run metadata carried alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epochs_trained: usize,
    pub lambda: f64,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub classifier: ClassifierConfig,
    pub synthesis: SynthesisSpec,
    pub meta: CheckpointMeta,
    pub weights: Vec<NamedTensor>,
}

fn tensor2<F: Float>(name: &str, a: &ndarray::Array2<F>) -> NamedTensor {
    NamedTensor {
        name: name.to_string(),
        shape: a.shape().to_vec(),
        data: a.iter().map(|v| v.to_f64_lossy()).collect(),
    }
}

fn tensor1<F: Float>(name: &str, a: &ndarray::Array1<F>) -> NamedTensor {
    NamedTensor {
        name: name.to_string(),
        shape: a.shape().to_vec(),
        data: a.iter().map(|v| v.to_f64_lossy()).collect(),
    }
}

/// Collects all model parameters as named tensors.
pub fn export_weights<F: Float>(model: &Classifier<F>) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    for (i, block) in model.backbone.blocks.iter().enumerate() {
        out.push(tensor2(&format!("block{i}.weight"), &block.weight));
        out.push(tensor1(&format!("block{i}.bias"), &block.bias));
    }
    out.push(tensor2("head.weight", &model.head.weight));
    out.push(tensor1("head.bias", &model.head.bias));
    out
}

/// Builds a checkpoint from a trained model.
pub fn checkpoint_from<F: Float>(
    model: &Classifier<F>,
    synthesis: SynthesisSpec,
    meta: CheckpointMeta,
) -> Checkpoint {
    Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        classifier: model.cfg.clone(),
        synthesis,
        meta,
        weights: export_weights(model),
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let text = serde_json::to_string(ckpt).map_err(|e| Error::ConfigParse(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "format version {} unsupported (expected {CHECKPOINT_FORMAT_VERSION})",
            ckpt.format_version
        )));
    }
    Ok(ckpt)
}

/// Rebuilds a model from a checkpoint, restoring every weight tensor.
pub fn restore_model<F: Float>(ckpt: &Checkpoint) -> Result<Classifier<F>> {
    // Architecture first (the RNG draws are immediately overwritten).
    let mut rng = StdRng::seed_from_u64(0);
    let mut model = Classifier::<F>::new(ckpt.classifier.clone(), &mut rng)?;
    let mut by_name: std::collections::BTreeMap<&str, &NamedTensor> =
        ckpt.weights.iter().map(|t| (t.name.as_str(), t)).collect();

    let mut take = |name: &str| -> Result<&NamedTensor> {
        by_name
            .remove(name)
            .ok_or_else(|| Error::CheckpointFormat(format!("missing tensor `{name}`")))
    };

    fn fill2<F: Float>(dst: &mut ndarray::Array2<F>, t: &NamedTensor) -> Result<()> {
        if dst.shape() != t.shape.as_slice() {
            return Err(Error::shape_mismatch(
                format!("checkpoint tensor {}", t.name),
                dst.shape(),
                &t.shape,
            ));
        }
        for (d, v) in dst.iter_mut().zip(t.data.iter()) {
            *d = F::from_f64_lossy(*v);
        }
        Ok(())
    }
    fn fill1<F: Float>(dst: &mut ndarray::Array1<F>, t: &NamedTensor) -> Result<()> {
        if dst.shape() != t.shape.as_slice() {
            return Err(Error::shape_mismatch(
                format!("checkpoint tensor {}", t.name),
                dst.shape(),
                &t.shape,
            ));
        }
        for (d, v) in dst.iter_mut().zip(t.data.iter()) {
            *d = F::from_f64_lossy(*v);
        }
        Ok(())
    }

    let n_blocks = model.backbone.blocks.len();
    for i in 0..n_blocks {
        let w = take(&format!("block{i}.weight"))?.clone();
        let b = take(&format!("block{i}.bias"))?.clone();
        fill2(&mut model.backbone.blocks[i].weight, &w)?;
        fill1(&mut model.backbone.blocks[i].bias, &b)?;
    }
    let w = take("head.weight")?.clone();
    let b = take("head.bias")?.clone();
    fill2(&mut model.head.weight, &w)?;
    fill1(&mut model.head.bias, &b)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeatureMode;

    fn sample_model() -> Classifier<f32> {
        let cfg = ClassifierConfig {
            num_classes: 2,
            feature_dim: 8,
            sigma: 0.5,
            backbone: "desk-cnn:4,8".into(),
            feature_mode: FeatureMode::Standardized,
            in_channels: 3,
        };
        let mut rng = StdRng::seed_from_u64(4);
        Classifier::new(cfg, &mut rng).unwrap()
    }

    #[test]
    fn save_load_restores_weights_exactly() {
        let model = sample_model();
        let ckpt = checkpoint_from(
            &model,
            SynthesisSpec::default(),
            CheckpointMeta {
                seed: 5,
                epochs_trained: 3,
                lambda: 1.0,
                config_digest: "abc".into(),
            },
        );
        let dir = std::env::temp_dir().join(format!("oodkit-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.meta.epochs_trained, 3);
        let restored: Classifier<f32> = restore_model(&loaded).unwrap();
        // f32 → f64 → f32 round-trips exactly.
        assert!(model
            .head
            .weight
            .iter()
            .zip(restored.head.weight.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(model.backbone.blocks[0]
            .weight
            .iter()
            .zip(restored.backbone.blocks[0].weight.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let model = sample_model();
        let mut ckpt = checkpoint_from(
            &model,
            SynthesisSpec::default(),
            CheckpointMeta {
                seed: 0,
                epochs_trained: 0,
                lambda: 0.0,
                config_digest: String::new(),
            },
        );
        ckpt.format_version = 99;
        let dir = std::env::temp_dir().join(format!("oodkit-ckpt-v-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        save_checkpoint(&path, &ckpt).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CheckpointFormat(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
