//! The classifier `g = head ∘ S ∘ backbone`: a feature extractor, a
//! per-sample feature transform (standardized, raw, or L2-normalized), and a
//! linear head. The transform the logits see is chosen by `feature_mode`;
//! the same forward path is used at train and test time.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::rngs::StdRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{mean_and_sample_std, DEGENERATE_STD};
use crate::image::ImageBatch;
use crate::num::Float;

use super::backbone::{BackboneSpec, ConvNet, ConvNetCache};
use super::layers::Linear;

/// How raw features are transformed before the linear head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Per-sample z-score rescaled by sigma; fixes the feature norm at
    /// `sigma·sqrt(m−1)`.
    Standardized,
    /// Features pass through untouched.
    Raw,
    /// `h · sigma / ‖h‖₂`, the ablation comparator with norm `sigma`.
    L2Normalized,
}

impl Default for FeatureMode {
    fn default() -> Self {
        FeatureMode::Standardized
    }
}

fn default_sigma() -> f64 {
    0.5
}

fn default_backbone() -> String {
    "desk-cnn".to_string()
}

fn default_in_channels() -> usize {
    3
}

/// Classifier architecture and feature-transform settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_backbone")]
    pub backbone: String,
    #[serde(default)]
    pub feature_mode: FeatureMode,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::ConfigParse(format!(
                "num_classes must be ≥ 2, got {}",
                self.num_classes
            )));
        }
        if self.feature_dim < 2 {
            return Err(Error::ConfigParse(format!(
                "feature_dim must be ≥ 2, got {}",
                self.feature_dim
            )));
        }
        if self.sigma <= 0.0 || !self.sigma.is_finite() {
            return Err(Error::ConfigParse(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        BackboneSpec::parse(&self.backbone, self.in_channels, self.feature_dim)?;
        Ok(())
    }
}

/// One forward pass: raw features, transformed features, and logits.
#[derive(Debug, Clone)]
pub struct ForwardOutput<F: Float> {
    pub features: Array2<F>,
    pub std_features: Array2<F>,
    pub logits: Array2<F>,
}

/// Per-row statistics needed to backpropagate through a feature transform.
enum FeatureCache<F: Float> {
    Standardized { sample_std: Array1<F> },
    Raw,
    L2 { norm: Array1<F> },
}

/// Everything the backward pass needs from one cached forward.
pub struct ClassifierCache<F: Float> {
    backbone: ConvNetCache<F>,
    features: Array2<F>,
    std_features: Array2<F>,
    feature: FeatureCache<F>,
    mode: FeatureMode,
}

/// Gradients of every parameter tensor, mirror of the model structure.
#[derive(Debug, Clone)]
pub struct ClassifierGrads<F: Float> {
    pub blocks: Vec<(Array2<F>, Array1<F>)>,
    pub head: (Array2<F>, Array1<F>),
}

impl<F: Float> ClassifierGrads<F> {
    pub fn scaled_add(&mut self, factor: F, other: &ClassifierGrads<F>) {
        for ((w, b), (ow, ob)) in self.blocks.iter_mut().zip(other.blocks.iter()) {
            w.scaled_add(factor, ow);
            b.scaled_add(factor, ob);
        }
        self.head.0.scaled_add(factor, &other.head.0);
        self.head.1.scaled_add(factor, &other.head.1);
    }

    pub fn is_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|(w, b)| w.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite()))
            && self.head.0.iter().all(|v| v.is_finite())
            && self.head.1.iter().all(|v| v.is_finite())
    }
}

/// Classifier: backbone features, feature transform, linear head.
#[derive(Debug, Clone)]
pub struct Classifier<F: Float> {
    pub cfg: ClassifierConfig,
    pub backbone: ConvNet<F>,
    pub head: Linear<F>,
}

impl<F: Float> Classifier<F> {
    pub fn new(cfg: ClassifierConfig, rng: &mut StdRng) -> Result<Self> {
        cfg.validate()?;
        let spec = BackboneSpec::parse(&cfg.backbone, cfg.in_channels, cfg.feature_dim)?;
        let backbone = ConvNet::new(&spec, cfg.in_channels, rng);
        let head = Linear::new(cfg.feature_dim, cfg.num_classes, rng);
        Ok(Self { cfg, backbone, head })
    }

    pub fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    pub fn sigma(&self) -> F {
        F::from_f64_lossy(self.cfg.sigma)
    }

    /// Forward with the configured feature mode.
    pub fn forward(&self, x: &ImageBatch<F>) -> Result<ForwardOutput<F>> {
        self.forward_with_mode(x, self.cfg.feature_mode)
    }

    pub fn forward_with_mode(
        &self,
        x: &ImageBatch<F>,
        mode: FeatureMode,
    ) -> Result<ForwardOutput<F>> {
        self.forward_cached(x, mode).map(|(out, _)| out)
    }

    /// Forward pass that also returns the backward cache.
    pub fn forward_cached(
        &self,
        x: &ImageBatch<F>,
        mode: FeatureMode,
    ) -> Result<(ForwardOutput<F>, ClassifierCache<F>)> {
        let (features, backbone_cache) = self.backbone.forward_cached(&x.data)?;
        let (std_features, feature_cache) = self.transform_features(&features, mode)?;
        let logits = self.head.forward(std_features.view());
        let out = ForwardOutput {
            features: features.clone(),
            std_features: std_features.clone(),
            logits,
        };
        let cache = ClassifierCache {
            backbone: backbone_cache,
            features,
            std_features,
            feature: feature_cache,
            mode,
        };
        Ok((out, cache))
    }

    fn transform_features(
        &self,
        features: &Array2<F>,
        mode: FeatureMode,
    ) -> Result<(Array2<F>, FeatureCache<F>)> {
        let sigma = self.sigma();
        match mode {
            FeatureMode::Raw => Ok((features.clone(), FeatureCache::Raw)),
            FeatureMode::Standardized => {
                let mut out = features.clone();
                let mut stds = Array1::zeros(features.nrows());
                for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                    let (mean, std) = mean_and_sample_std(row.view());
                    if std.to_f64_lossy() < DEGENERATE_STD {
                        return Err(Error::DegenerateFeature {
                            sigma_h: std.to_f64_lossy(),
                        });
                    }
                    let scale = sigma / std;
                    row.mapv_inplace(|v| (v - mean) * scale);
                    stds[i] = std;
                }
                Ok((out, FeatureCache::Standardized { sample_std: stds }))
            }
            FeatureMode::L2Normalized => {
                let mut out = features.clone();
                let mut norms = Array1::zeros(features.nrows());
                for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                    let norm = row.iter().map(|v| *v * *v).sum::<F>().sqrt();
                    if norm.to_f64_lossy() < DEGENERATE_STD {
                        return Err(Error::DegenerateFeature {
                            sigma_h: norm.to_f64_lossy(),
                        });
                    }
                    let scale = sigma / norm;
                    row.mapv_inplace(|v| v * scale);
                    norms[i] = norm;
                }
                Ok((out, FeatureCache::L2 { norm: norms }))
            }
        }
    }

    /// Backpropagates logit gradients through head, feature transform, and
    /// backbone. Returns parameter gradients when `need_params` and the
    /// image-space gradient when `need_input`.
    pub fn backward(
        &self,
        cache: &ClassifierCache<F>,
        d_logits: &Array2<F>,
        need_params: bool,
        need_input: bool,
    ) -> (Option<ClassifierGrads<F>>, Option<Array4<F>>) {
        let (head_grads, d_std) = self.head.backward(
            cache.std_features.view(),
            d_logits.view(),
            need_params,
            true,
        );
        let d_std = d_std.expect("head input gradient always requested");
        let d_features = self.feature_backward(cache, &d_std);
        let (block_grads, d_input) =
            self.backbone
                .backward(&cache.backbone, &d_features, need_params, need_input);
        let grads = need_params.then(|| ClassifierGrads {
            blocks: block_grads.expect("param grads requested"),
            head: head_grads.expect("param grads requested"),
        });
        (grads, d_input)
    }

    fn feature_backward(&self, cache: &ClassifierCache<F>, d_std: &Array2<F>) -> Array2<F> {
        let sigma = self.sigma();
        match (&cache.feature, cache.mode) {
            (FeatureCache::Raw, _) => d_std.clone(),
            (FeatureCache::Standardized { sample_std }, _) => {
                let m = cache.features.ncols();
                let m_f = F::from_usize_lossy(m);
                let m1 = F::from_usize_lossy(m - 1);
                let mut out = Array2::zeros(d_std.raw_dim());
                for (i, g) in d_std.axis_iter(Axis(0)).enumerate() {
                    let h_tilde = cache.std_features.index_axis(Axis(0), i);
                    let g_mean = g.sum() / m_f;
                    let dot = g
                        .iter()
                        .zip(h_tilde.iter())
                        .map(|(a, b)| *a * *b)
                        .sum::<F>();
                    let coef = dot / (m1 * sigma * sigma);
                    let scale = sigma / sample_std[i];
                    let mut row = out.index_axis_mut(Axis(0), i);
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = scale * (g[j] - g_mean - h_tilde[j] * coef);
                    }
                }
                out
            }
            (FeatureCache::L2 { norm }, _) => {
                let mut out = Array2::zeros(d_std.raw_dim());
                for (i, g) in d_std.axis_iter(Axis(0)).enumerate() {
                    let h = cache.features.index_axis(Axis(0), i);
                    let n = norm[i];
                    let dot = g.iter().zip(h.iter()).map(|(a, b)| *a * *b).sum::<F>();
                    let coef = dot / (n * n);
                    let scale = sigma / n;
                    let mut row = out.index_axis_mut(Axis(0), i);
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = scale * (g[j] - h[j] * coef);
                    }
                }
                out
            }
        }
    }
}

/// Read-only scoring surface over a trained model.
pub trait Model<F: Float> {
    fn num_classes(&self) -> usize;
    fn logits(&self, x: &ImageBatch<F>) -> Result<Array2<F>>;
}

/// Models that can differentiate a logit functional w.r.t. the input image.
pub trait DifferentiableModel<F: Float>: Model<F> {
    /// Gradient of `Σ_{i,k} seed[i,k] · logits[i,k]` w.r.t. `x`. `seed` rows
    /// select per-sample logit functionals (e.g. one-hot for a single-class
    /// logit). Model parameters are read-only.
    fn input_gradient(&self, x: &ImageBatch<F>, seed: &Array2<F>) -> Result<Array4<F>>;
}

impl<F: Float> Model<F> for Classifier<F> {
    fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    fn logits(&self, x: &ImageBatch<F>) -> Result<Array2<F>> {
        Ok(self.forward(x)?.logits)
    }
}

impl<F: Float> DifferentiableModel<F> for Classifier<F> {
    fn input_gradient(&self, x: &ImageBatch<F>, seed: &Array2<F>) -> Result<Array4<F>> {
        if seed.nrows() != x.len() || seed.ncols() != self.cfg.num_classes {
            return Err(Error::shape_mismatch(
                "gradient seed vs batch/classes",
                seed.shape(),
                &[x.len(), self.cfg.num_classes],
            ));
        }
        let (_, cache) = self.forward_cached(x, self.cfg.feature_mode)?;
        let (_, dx) = self.backward(&cache, seed, false, true);
        Ok(dx.expect("input gradient requested"))
    }
}
