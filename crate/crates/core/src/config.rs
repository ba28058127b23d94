//! Declarative run configuration: one TOML file per run, with CLI flags
//! overriding individual fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ClassifierConfig;
use crate::schedule::{AlphaSchedule, ScheduleMode};
use crate::synthesis::{MaskGranularity, SynthesisConfig, SynthesisMethod};
use crate::train::{AlphaGranularity, OptimizerConfig};

/// Alpha as written in config files: a constant scalar or a linear ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaValue {
    Constant(f64),
    Ramp { start: f64, end: f64 },
}

impl AlphaValue {
    /// Materializes a schedule over `total_steps` steps.
    pub fn schedule(&self, total_steps: usize) -> Result<AlphaSchedule> {
        match *self {
            AlphaValue::Constant(v) => AlphaSchedule::constant(v, total_steps),
            AlphaValue::Ramp { start, end } => {
                AlphaSchedule::new(start, end, total_steps, ScheduleMode::Linear)
            }
        }
    }
}

fn default_p_inv() -> f64 {
    100.0
}

/// Synthesis settings as written in config files. Turned into a runtime
/// [`SynthesisConfig`] once the training length is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSpec {
    pub method: SynthesisMethod,
    #[serde(default = "default_p_inv")]
    pub p_inv: f64,
    #[serde(default)]
    pub alpha: Option<AlphaValue>,
    #[serde(default)]
    pub noise_scale: Option<f64>,
    #[serde(default)]
    pub mask_granularity: MaskGranularity,
    #[serde(default)]
    pub alpha_granularity: AlphaGranularity,
}

impl Default for SynthesisSpec {
    fn default() -> Self {
        Self {
            method: SynthesisMethod::Identity,
            p_inv: 100.0,
            alpha: None,
            noise_scale: None,
            mask_granularity: MaskGranularity::Element,
            alpha_granularity: AlphaGranularity::Epoch,
        }
    }
}

impl SynthesisSpec {
    /// Builds the runtime config; `total_steps` is the schedule length
    /// implied by `alpha_granularity` (epochs, or epochs × batches).
    pub fn runtime(&self, total_steps: usize) -> Result<SynthesisConfig> {
        let alpha = match &self.alpha {
            Some(v) => Some(v.schedule(total_steps.max(1))?),
            None => None,
        };
        let cfg = SynthesisConfig {
            method: self.method,
            p_inv: self.p_inv,
            alpha,
            noise_scale: self.noise_scale,
            mask_granularity: self.mask_granularity,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Where training and evaluation data come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataConfig {
    /// Generated benchmark directory (`meta.toml` + archive).
    #[serde(default)]
    pub benchmark: Option<PathBuf>,
    /// Image-folder alternative for training data (class subfolders).
    #[serde(default)]
    pub train_folder: Option<PathBuf>,
    /// Image-folder validation set.
    #[serde(default)]
    pub val_folder: Option<PathBuf>,
    /// Resize applied when loading image folders.
    #[serde(default)]
    pub resize: Option<(usize, usize)>,
    #[serde(default)]
    pub random_horizontal_flip: bool,
    /// Minimum area scale for random resized crops, when enabled.
    #[serde(default)]
    pub random_resized_crop: Option<f64>,
}

/// A postprocessor request in a config file or on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PostprocessorSpec {
    Msp,
    Tempscale { temperature: f64 },
    Energy { temperature: f64 },
    Odin { temperature: f64, epsilon: f64 },
    IodinTopk { temperature: f64, epsilon: f64, p_inv: f64 },
    IodinChannel { temperature: f64, epsilon: f64 },
}

fn default_postprocessors() -> Vec<PostprocessorSpec> {
    vec![
        PostprocessorSpec::Msp,
        PostprocessorSpec::Energy { temperature: 1.0 },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_postprocessors")]
    pub postprocessors: Vec<PostprocessorSpec>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            postprocessors: default_postprocessors(),
        }
    }
}

fn default_lambda() -> f64 {
    1.0
}

/// Full declarative run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub synthesis: SynthesisSpec,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.classifier.validate()?;
        self.optimizer.validate()?;
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::ConfigParse(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        // Surface synthesis problems at parse time with a unit-length
        // schedule placeholder.
        self.synthesis.runtime(1)?;
        Ok(())
    }

    /// Stable short digest over the serialized config (FNV-1a).
    pub fn digest(&self) -> String {
        let text = self.to_toml().unwrap_or_default();
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in text.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 3
lambda = 1.0

[classifier]
num_classes = 2
feature_dim = 32
sigma = 0.5
backbone = "desk-cnn"

[synthesis]
method = "grad_add"
p_inv = 10.0
alpha = { start = 300.0, end = 30.0 }

[optimizer]
lr = 0.05
epochs = 10
batch_size = 64

[data]
benchmark = "bench/"

[[eval.postprocessors]]
kind = "msp"

[[eval.postprocessors]]
kind = "odin"
temperature = 1000.0
epsilon = 0.0014
"#;

    #[test]
    fn parse_serialize_parse_is_identity() {
        let cfg = RunConfig::from_toml(SAMPLE).unwrap();
        let text = cfg.to_toml().unwrap();
        let again = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn alpha_ramp_becomes_linear_schedule() {
        let cfg = RunConfig::from_toml(SAMPLE).unwrap();
        let synth = cfg.synthesis.runtime(10).unwrap();
        let schedule = synth.alpha.unwrap();
        assert_eq!(schedule.value_at(0).unwrap(), 300.0);
        assert_eq!(schedule.value_at(9).unwrap(), 30.0);
    }

    #[test]
    fn scalar_alpha_is_constant_schedule() {
        let text = SAMPLE.replace("alpha = { start = 300.0, end = 30.0 }", "alpha = 10.0");
        let cfg = RunConfig::from_toml(&text).unwrap();
        let synth = cfg.synthesis.runtime(5).unwrap();
        assert_eq!(synth.alpha.unwrap().value_at(3).unwrap(), 10.0);
    }

    #[test]
    fn invalid_method_names_the_field() {
        let text = SAMPLE.replace("grad_add", "grad_banana");
        let err = RunConfig::from_toml(&text).unwrap_err();
        match err {
            Error::ConfigParse(msg) => {
                assert!(msg.contains("method"), "message should name the field: {msg}");
            }
            other => panic!("expected ConfigParse, got {other:?}"),
        }
    }

    #[test]
    fn missing_alpha_for_grad_method_is_rejected() {
        let text = SAMPLE.replace("alpha = { start = 300.0, end = 30.0 }", "");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn defaults_match_the_documented_table() {
        let cfg = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.classifier.sigma, 0.5);
        assert_eq!(cfg.lambda, 1.0);
        assert_eq!(cfg.synthesis.p_inv, 10.0);
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = RunConfig::from_toml(SAMPLE).unwrap();
        let b = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = RunConfig::from_toml(&SAMPLE.replace("seed = 3", "seed = 4")).unwrap();
        assert_ne!(a.digest(), c.digest());
    }
}
