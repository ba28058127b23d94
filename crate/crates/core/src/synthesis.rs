//! Virtual outlier synthesis: perturb the class-defining content of an image
//! while preserving its environment.
//!
//! The pipeline identifies influential pixels with the input gradient of the
//! true-class logit (computed with the model being trained), suppresses the
//! low-magnitude remainder with a per-image percentile mask, and then either
//! adds/subtracts the masked gradient, shuffles the selected pixels, or adds
//! plain Gaussian noise. Outputs are detached training inputs — on-the-fly
//! data augmentation, never part of the gradient graph — and are not clamped
//! back into the source value range.

use ndarray::{Array2, Array3, Array4, Axis};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::loss::one_hot;
use crate::model::DifferentiableModel;
use crate::num::Float;
use crate::schedule::AlphaSchedule;

/// Per-image gradient of the target-class logit w.r.t. the input.
#[derive(Debug, Clone)]
pub struct SaliencyMap<F: Float> {
    pub grad: Array3<F>,
    pub source_index: usize,
    pub target_class: usize,
}

/// Saliency maps for a whole batch, stored contiguously.
#[derive(Debug, Clone)]
pub struct SaliencyBatch<F: Float> {
    pub grads: Array4<F>,
    pub target_classes: Vec<usize>,
}

impl<F: Float> SaliencyBatch<F> {
    pub fn len(&self) -> usize {
        self.grads.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Extracts the map of one batch element.
    pub fn map(&self, i: usize) -> SaliencyMap<F> {
        SaliencyMap {
            grad: self.grads.index_axis(Axis(0), i).to_owned(),
            source_index: i,
            target_class: self.target_classes[i],
        }
    }
}

/// Granularity of the invariant mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskGranularity {
    /// Threshold individual `(channel, y, x)` entries by `|G|`.
    Element,
    /// Reduce to a 2D pixel score `Σ_channels exp(G)` and keep whole pixels.
    Pixel,
}

impl Default for MaskGranularity {
    fn default() -> Self {
        MaskGranularity::Element
    }
}

/// Boolean mask of kept positions for one image.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskData {
    Element(Array3<bool>),
    Pixel(Array2<bool>),
}

/// Mask of the invariant (kept) positions plus the percentage that produced
/// it.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantMask {
    pub data: MaskData,
    pub p_inv: f64,
}

impl InvariantMask {
    pub fn kept(&self) -> usize {
        match &self.data {
            MaskData::Element(m) => m.iter().filter(|v| **v).count(),
            MaskData::Pixel(m) => m.iter().filter(|v| **v).count(),
        }
    }

    pub fn total(&self) -> usize {
        match &self.data {
            MaskData::Element(m) => m.len(),
            MaskData::Pixel(m) => m.len(),
        }
    }
}

/// Outlier construction method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMethod {
    /// `x' = x + alpha · G_inv` — raises the true-class logit while
    /// destroying what the model currently relies on.
    GradAdd,
    /// `x' = x − alpha · G_inv`.
    GradSub,
    /// Shuffle the most salient pixels among themselves.
    InvariantShuffle,
    /// Shuffle a uniformly random subset of pixels.
    RandomShuffle,
    /// `x' = x + noise_scale · ε`, `ε ~ N(0, I)`.
    GaussianNoise,
    /// `x' = x` — the degenerate "ID as outlier" baseline.
    Identity,
}

/// Runtime synthesis configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    pub method: SynthesisMethod,
    /// Percentage of positions treated as invariant, in (0, 100].
    pub p_inv: f64,
    /// Perturbation-strength schedule; required by the gradient methods.
    pub alpha: Option<AlphaSchedule>,
    /// Noise scale; required by `GaussianNoise`.
    pub noise_scale: Option<f64>,
    pub mask_granularity: MaskGranularity,
}

impl SynthesisConfig {
    pub fn identity() -> Self {
        Self {
            method: SynthesisMethod::Identity,
            p_inv: 100.0,
            alpha: None,
            noise_scale: None,
            mask_granularity: MaskGranularity::Element,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.p_inv) || self.p_inv == 0.0 {
            return Err(Error::InvalidPercentage { value: self.p_inv });
        }
        match self.method {
            SynthesisMethod::GradAdd | SynthesisMethod::GradSub => {
                if self.alpha.is_none() {
                    return Err(Error::ConfigParse(
                        "gradient synthesis requires an alpha schedule".into(),
                    ));
                }
            }
            SynthesisMethod::GaussianNoise => match self.noise_scale {
                Some(s) if s >= 0.0 && s.is_finite() => {}
                _ => {
                    return Err(Error::ConfigParse(
                        "gaussian_noise requires a nonnegative noise_scale".into(),
                    ))
                }
            },
            SynthesisMethod::InvariantShuffle | SynthesisMethod::RandomShuffle => {
                // p_inv already validated above.
            }
            SynthesisMethod::Identity => {}
        }
        Ok(())
    }
}

/// Number of positions kept by a top-`p`% selection over `n` positions:
/// `⌈p/100 · n⌉`, guarded against float representation of `p`.
pub fn top_k_count(n: usize, p: f64) -> usize {
    let t = p * n as f64 / 100.0;
    let k = if (t - t.round()).abs() < 1e-9 {
        t.round() as usize
    } else {
        t.ceil() as usize
    };
    k.clamp(1, n)
}

/// `k`-th largest value of an unsorted list (1-based `k`).
fn kth_largest<F: Float>(values: &mut Vec<F>, k: usize) -> F {
    debug_assert!(k >= 1 && k <= values.len());
    let idx = k - 1;
    values
        .select_nth_unstable_by(idx, |a, b| b.partial_cmp(a).expect("no NaN in saliency"));
    values[idx]
}

/// Saliency of the true-class logit w.r.t. each input, evaluated at the
/// model's current parameters. The result is detached: using it never
/// updates the model.
pub fn compute_saliency<F: Float, M: DifferentiableModel<F>>(
    model: &M,
    x: &ImageBatch<F>,
    y: &[usize],
) -> Result<SaliencyBatch<F>> {
    if y.len() != x.len() {
        return Err(Error::shape_mismatch(
            "labels vs batch",
            &[y.len()],
            &[x.len()],
        ));
    }
    let c = model.num_classes();
    if let Some(&bad) = y.iter().find(|&&cls| cls >= c) {
        return Err(Error::ConfigParse(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let seed: Array2<F> = one_hot(y, c);
    let grads = model.input_gradient(x, &seed)?;
    if grads.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure(
            "saliency gradient contains non-finite entries".into(),
        ));
    }
    Ok(SaliencyBatch {
        grads,
        target_classes: y.to_vec(),
    })
}

/// Suppresses the low-magnitude part of each saliency map.
///
/// Element granularity keeps, per image, every entry whose `|G|` is at least
/// the `⌈p_inv% · n⌉`-th largest magnitude (ties at the threshold all
/// survive) and zeroes the rest. Pixel granularity reduces each map to a 2D
/// score `Σ_channels exp(G)`, keeps the top `p_inv%` of pixel locations, and
/// zeroes whole pixels.
pub fn sparsify<F: Float>(
    saliency: &SaliencyBatch<F>,
    p_inv: f64,
    granularity: MaskGranularity,
) -> Result<(SaliencyBatch<F>, Vec<InvariantMask>)> {
    if !(0.0..=100.0).contains(&p_inv) || p_inv == 0.0 {
        return Err(Error::InvalidPercentage { value: p_inv });
    }
    let (b, c, h, w) = {
        let s = saliency.grads.shape();
        (s[0], s[1], s[2], s[3])
    };
    let mut out = saliency.grads.clone();
    let mut masks = Vec::with_capacity(b);
    for bi in 0..b {
        let mut img = out.index_axis_mut(Axis(0), bi);
        match granularity {
            MaskGranularity::Element => {
                let mut mags: Vec<F> = img.iter().map(|v| v.abs()).collect();
                let k = top_k_count(c * h * w, p_inv);
                let threshold = kth_largest(&mut mags, k);
                let mut mask = Array3::from_elem((c, h, w), false);
                for (m, v) in mask.iter_mut().zip(img.iter_mut()) {
                    if v.abs() >= threshold {
                        *m = true;
                    } else {
                        *v = F::zero();
                    }
                }
                masks.push(InvariantMask {
                    data: MaskData::Element(mask),
                    p_inv,
                });
            }
            MaskGranularity::Pixel => {
                let mut score = Array2::<F>::zeros((h, w));
                for ci in 0..c {
                    for yi in 0..h {
                        for xi in 0..w {
                            score[[yi, xi]] += img[[ci, yi, xi]].exp();
                        }
                    }
                }
                let mut vals: Vec<F> = score.iter().cloned().collect();
                let k = top_k_count(h * w, p_inv);
                let threshold = kth_largest(&mut vals, k);
                let mask = score.mapv(|v| v >= threshold);
                for ci in 0..c {
                    for yi in 0..h {
                        for xi in 0..w {
                            if !mask[[yi, xi]] {
                                img[[ci, yi, xi]] = F::zero();
                            }
                        }
                    }
                }
                masks.push(InvariantMask {
                    data: MaskData::Pixel(mask),
                    p_inv,
                });
            }
        }
    }
    Ok((
        SaliencyBatch {
            grads: out,
            target_classes: saliency.target_classes.clone(),
        },
        masks,
    ))
}

/// `x' = x + sign · alpha · G_inv`, never clamped to the input value range.
pub fn synthesize_grad<F: Float>(
    x: &ImageBatch<F>,
    g_inv: &SaliencyBatch<F>,
    alpha: f64,
    sign: i8,
) -> Result<ImageBatch<F>> {
    if x.data.shape() != g_inv.grads.shape() {
        return Err(Error::shape_mismatch(
            "image batch vs saliency batch",
            x.data.shape(),
            g_inv.grads.shape(),
        ));
    }
    if !(alpha >= 0.0) {
        return Err(Error::ConfigParse(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    let factor = F::from_f64_lossy(alpha * sign.signum() as f64);
    let mut out = x.data.clone();
    out.scaled_add(factor, &g_inv.grads);
    Ok(ImageBatch::new(out, x.value_range))
}

/// Permutes whole pixels at masked 2D locations uniformly at random,
/// leaving every unmasked pixel untouched. The multiset of pixel vectors is
/// preserved per image.
pub fn synthesize_shuffle<F: Float>(
    x: &ImageBatch<F>,
    masks: &[InvariantMask],
    rng: &mut StdRng,
) -> Result<ImageBatch<F>> {
    if masks.len() != x.len() {
        return Err(Error::shape_mismatch(
            "mask count vs batch",
            &[masks.len()],
            &[x.len()],
        ));
    }
    let (c, h, w) = x.image_shape();
    let mut out = x.data.clone();
    for (bi, inv_mask) in masks.iter().enumerate() {
        let mask = match &inv_mask.data {
            MaskData::Pixel(m) => m,
            MaskData::Element(_) => {
                return Err(Error::ConfigParse(
                    "pixel shuffle requires a pixel-granularity mask".into(),
                ))
            }
        };
        if mask.shape() != [h, w] {
            return Err(Error::shape_mismatch("mask vs image", mask.shape(), &[h, w]));
        }
        let locations: Vec<(usize, usize)> = (0..h)
            .flat_map(|yi| (0..w).map(move |xi| (yi, xi)))
            .filter(|&(yi, xi)| mask[[yi, xi]])
            .collect();
        if locations.is_empty() {
            return Err(Error::EmptyMask);
        }
        let mut permuted = locations.clone();
        permuted.shuffle(rng);
        // Gather source pixels first so the permutation acts on the original.
        let src = x.data.index_axis(Axis(0), bi);
        let mut dst = out.index_axis_mut(Axis(0), bi);
        for (to, from) in locations.iter().zip(permuted.iter()) {
            for ci in 0..c {
                dst[[ci, to.0, to.1]] = src[[ci, from.0, from.1]];
            }
        }
    }
    Ok(ImageBatch::new(out, x.value_range))
}

/// `x' = x + noise_scale · ε`, `ε ~ N(0, I)`, no clamping.
pub fn synthesize_gaussian<F: Float>(
    x: &ImageBatch<F>,
    noise_scale: f64,
    rng: &mut StdRng,
) -> Result<ImageBatch<F>> {
    if !(noise_scale >= 0.0) {
        return Err(Error::ConfigParse(format!(
            "noise_scale must be nonnegative, got {noise_scale}"
        )));
    }
    let mut out = x.data.clone();
    for v in out.iter_mut() {
        let eps: f64 = rng.sample(StandardNormal);
        *v += F::from_f64_lossy(noise_scale * eps);
    }
    Ok(ImageBatch::new(out, x.value_range))
}

/// Uniformly random pixel masks with the same cardinality rule as the
/// saliency-driven masks: `⌈p_inv% · H·W⌉` pixels per image.
pub fn random_pixel_masks(
    batch: usize,
    height: usize,
    width: usize,
    p_inv: f64,
    rng: &mut StdRng,
) -> Result<Vec<InvariantMask>> {
    if !(0.0..=100.0).contains(&p_inv) || p_inv == 0.0 {
        return Err(Error::InvalidPercentage { value: p_inv });
    }
    let n = height * width;
    let k = top_k_count(n, p_inv);
    let mut masks = Vec::with_capacity(batch);
    for _ in 0..batch {
        let chosen = rand::seq::index::sample(rng, n, k);
        let mut mask = Array2::from_elem((height, width), false);
        for idx in chosen.iter() {
            mask[[idx / width, idx % width]] = true;
        }
        masks.push(InvariantMask {
            data: MaskData::Pixel(mask),
            p_inv,
        });
    }
    Ok(masks)
}

/// Dispatches to the configured synthesis method with
/// `alpha = schedule(step)`. The identity method returns `x` unchanged.
pub fn synthesize<F: Float, M: DifferentiableModel<F>>(
    model: &M,
    x: &ImageBatch<F>,
    y: &[usize],
    cfg: &SynthesisConfig,
    step: usize,
    rng: &mut StdRng,
) -> Result<ImageBatch<F>> {
    cfg.validate()?;
    match cfg.method {
        SynthesisMethod::Identity => Ok(x.clone()),
        SynthesisMethod::GaussianNoise => {
            synthesize_gaussian(x, cfg.noise_scale.expect("validated"), rng)
        }
        SynthesisMethod::RandomShuffle => {
            let (_, h, w) = x.image_shape();
            let masks = random_pixel_masks(x.len(), h, w, cfg.p_inv, rng)?;
            synthesize_shuffle(x, &masks, rng)
        }
        SynthesisMethod::InvariantShuffle => {
            let saliency = compute_saliency(model, x, y)?;
            let (_, masks) = sparsify(&saliency, cfg.p_inv, MaskGranularity::Pixel)?;
            synthesize_shuffle(x, &masks, rng)
        }
        SynthesisMethod::GradAdd | SynthesisMethod::GradSub => {
            let schedule = cfg.alpha.as_ref().expect("validated");
            let alpha = schedule.value_at(step)?;
            let saliency = compute_saliency(model, x, y)?;
            let (g_inv, _) = sparsify(&saliency, cfg.p_inv, cfg.mask_granularity)?;
            let sign = if cfg.method == SynthesisMethod::GradAdd {
                1
            } else {
                -1
            };
            synthesize_grad(x, &g_inv, alpha, sign)
        }
    }
}
