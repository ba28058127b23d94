//! In-memory labeled image sets and the training-time augmentations a
//! dataset declares.

use ndarray::{Array4, Axis};
use rand::rngs::StdRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::ImageBatch;
use crate::num::Float;

/// Declared preprocessing for a dataset: an eager resize plus optional
/// train-time augmentations (horizontal flips and random resized crops).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    /// Target (height, width); applied when loading from image folders.
    pub resize: Option<(usize, usize)>,
    #[serde(default)]
    pub random_horizontal_flip: bool,
    /// Minimum area scale of a random resized crop, e.g. `0.6`.
    #[serde(default)]
    pub random_resized_crop: Option<f64>,
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self {
            resize: None,
            random_horizontal_flip: false,
            random_resized_crop: None,
        }
    }
}

/// A fully materialized dataset: images, labels, identifiers.
#[derive(Debug, Clone)]
pub struct Dataset<F: Float> {
    pub images: Array4<F>,
    /// One label per sample; empty for unlabeled (OOD) sets.
    pub labels: Vec<usize>,
    pub sample_ids: Vec<String>,
    pub class_names: Vec<String>,
    pub value_range: (f64, f64),
    pub transform: TransformSpec,
}

impl<F: Float> Dataset<F> {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// The whole set as one image batch.
    pub fn to_image_batch(&self) -> ImageBatch<F> {
        ImageBatch::new(self.images.clone(), self.value_range)
    }

    /// Copies the selected samples into a batch plus their labels.
    pub fn batch(&self, indices: &[usize]) -> (ImageBatch<F>, Vec<usize>) {
        let s = self.images.shape();
        let mut data = Array4::zeros((indices.len(), s[1], s[2], s[3]));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            data.index_axis_mut(Axis(0), row)
                .assign(&self.images.index_axis(Axis(0), i));
            if !self.labels.is_empty() {
                labels.push(self.labels[i]);
            }
        }
        (ImageBatch::new(data, self.value_range), labels)
    }
}

/// Applies the declared train-time augmentations to a batch in place.
/// Consumes RNG draws in a fixed per-sample order so two training loops that
/// share a seed stay in lockstep.
pub fn augment_batch<F: Float>(
    batch: &mut ImageBatch<F>,
    transform: &TransformSpec,
    rng: &mut StdRng,
) {
    let (c, h, w) = batch.image_shape();
    for bi in 0..batch.len() {
        if let Some(min_scale) = transform.random_resized_crop {
            let scale: f64 = rng.random_range(min_scale..=1.0);
            let side = scale.sqrt();
            let ch = ((h as f64 * side).round() as usize).clamp(1, h);
            let cw = ((w as f64 * side).round() as usize).clamp(1, w);
            let oy = if h > ch { rng.random_range(0..=h - ch) } else { 0 };
            let ox = if w > cw { rng.random_range(0..=w - cw) } else { 0 };
            if ch != h || cw != w {
                let src = batch.data.index_axis(Axis(0), bi).to_owned();
                let mut dst = batch.data.index_axis_mut(Axis(0), bi);
                // Bilinear resample of the crop back to (h, w).
                for ci in 0..c {
                    for yi in 0..h {
                        let fy = if h > 1 {
                            yi as f64 / (h - 1) as f64 * (ch - 1) as f64
                        } else {
                            0.0
                        };
                        let y0 = fy.floor() as usize;
                        let y1 = (y0 + 1).min(ch - 1);
                        let ty = F::from_f64_lossy(fy - y0 as f64);
                        for xi in 0..w {
                            let fx = if w > 1 {
                                xi as f64 / (w - 1) as f64 * (cw - 1) as f64
                            } else {
                                0.0
                            };
                            let x0 = fx.floor() as usize;
                            let x1 = (x0 + 1).min(cw - 1);
                            let tx = F::from_f64_lossy(fx - x0 as f64);
                            let a = src[[ci, oy + y0, ox + x0]];
                            let b = src[[ci, oy + y0, ox + x1]];
                            let d = src[[ci, oy + y1, ox + x0]];
                            let e = src[[ci, oy + y1, ox + x1]];
                            let top = a + (b - a) * tx;
                            let bot = d + (e - d) * tx;
                            dst[[ci, yi, xi]] = top + (bot - top) * ty;
                        }
                    }
                }
            }
        }
        if transform.random_horizontal_flip && rng.random_bool(0.5) {
            let mut img = batch.data.index_axis_mut(Axis(0), bi);
            for ci in 0..c {
                for yi in 0..h {
                    for xi in 0..w / 2 {
                        let tmp = img[[ci, yi, xi]];
                        img[[ci, yi, xi]] = img[[ci, yi, w - 1 - xi]];
                        img[[ci, yi, w - 1 - xi]] = tmp;
                    }
                }
            }
        }
    }
}
