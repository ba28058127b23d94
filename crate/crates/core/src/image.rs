//! Image batches: rank-4 arrays `(batch, channels, height, width)` with
//! value-range metadata.

use ndarray::Array4;

use crate::num::Float;

/// A batch of images. Carrier of both in-distribution inputs `x` and
/// synthesized outliers `x'`; the latter are deliberately allowed to leave
/// `value_range`, so the range is metadata about the *source* domain, not a
/// clamp.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch<F: Float> {
    pub data: Array4<F>,
    /// Nominal (min, max) of the source pixel domain, e.g. `(0.0, 1.0)`.
    pub value_range: (f64, f64),
}

impl<F: Float> ImageBatch<F> {
    pub fn new(data: Array4<F>, value_range: (f64, f64)) -> Self {
        Self { data, value_range }
    }

    /// Batch with the unit value range `(0, 1)`.
    pub fn unit_range(data: Array4<F>) -> Self {
        Self::new(data, (0.0, 1.0))
    }

    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (channels, height, width) of a single image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[1], s[2], s[3])
    }

    /// Sub-batch of the given indices (copies).
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Array4::zeros((
            indices.len(),
            self.data.shape()[1],
            self.data.shape()[2],
            self.data.shape()[3],
        ));
        for (row, &i) in indices.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), row)
                .assign(&self.data.index_axis(ndarray::Axis(0), i));
        }
        Self::new(out, self.value_range)
    }
}
