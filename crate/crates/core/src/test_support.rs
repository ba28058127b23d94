//! Shared helpers for unit tests: closed-form toy models.

use ndarray::{Array2, Array4};

use crate::error::Result;
use crate::image::ImageBatch;
use crate::model::{DifferentiableModel, Model};

/// Toy linear model: `logits = W · flatten(x)`. Input gradients have the
/// closed form `seedᵀ · W` reshaped to the image, which makes it an exact
/// oracle for saliency and perturbation identities.
pub struct LinearImageModel {
    pub w: Array2<f64>, // [C, c*h*w]
    pub shape: (usize, usize, usize),
}

impl Model<f64> for LinearImageModel {
    fn num_classes(&self) -> usize {
        self.w.nrows()
    }

    fn logits(&self, x: &ImageBatch<f64>) -> Result<Array2<f64>> {
        let b = x.len();
        let flat = x
            .data
            .to_shape((b, self.w.ncols()))
            .expect("flatten")
            .to_owned();
        Ok(flat.dot(&self.w.t()))
    }
}

impl DifferentiableModel<f64> for LinearImageModel {
    fn input_gradient(&self, x: &ImageBatch<f64>, seed: &Array2<f64>) -> Result<Array4<f64>> {
        let flat = seed.dot(&self.w); // [B, chw]
        let (c, h, w) = self.shape;
        Ok(flat
            .to_shape((x.len(), c, h, w))
            .expect("unflatten")
            .to_owned())
    }
}
