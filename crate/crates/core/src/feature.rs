//! Per-sample feature standardization.
//!
//! A feature vector `h` of length `m` is z-scored with the *sample* standard
//! deviation (`m − 1` denominator) and rescaled by `sigma`, with the mean
//! fixed at zero. The resulting vector always has Euclidean norm exactly
//! `sigma · sqrt(m − 1)`, which is what bounds the classifier logits during
//! joint training.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::num::Float;

/// Sample standard deviation below this is treated as a constant vector.
pub const DEGENERATE_STD: f64 = 1e-12;

/// Raw feature vector of dimensionality `m ≥ 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<F: Float> {
    values: Array1<F>,
}

impl<F: Float> FeatureVector<F> {
    /// Wraps `values`; `m ≥ 2` is required so the sample standard deviation
    /// is defined.
    pub fn new(values: Array1<F>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::ConfigParse(format!(
                "feature dimensionality must be ≥ 2, got {}",
                values.len()
            )));
        }
        Ok(Self { values })
    }

    pub fn from_slice(values: &[F]) -> Result<Self> {
        Self::new(Array1::from(values.to_vec()))
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> ArrayView1<'_, F> {
        self.values.view()
    }
}

/// Standardized feature with norm `sigma · sqrt(m − 1)` and zero mean.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedFeature<F: Float> {
    values: Array1<F>,
    sigma: F,
}

impl<F: Float> StandardizedFeature<F> {
    pub fn values(&self) -> ArrayView1<'_, F> {
        self.values.view()
    }

    pub fn sigma(&self) -> F {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Euclidean norm; equals `sigma · sqrt(m − 1)` up to rounding.
    pub fn norm(&self) -> F {
        self.values.iter().map(|v| *v * *v).sum::<F>().sqrt()
    }
}

/// Mean and sample standard deviation (`m − 1` denominator) of a row.
pub fn mean_and_sample_std<F: Float>(values: ArrayView1<'_, F>) -> (F, F) {
    let m = values.len();
    let mean = values.sum() / F::from_usize_lossy(m);
    let ss = values.iter().map(|v| (*v - mean) * (*v - mean)).sum::<F>();
    let var = ss / F::from_usize_lossy(m - 1);
    (mean, var.sqrt())
}

/// Standardizes `h` to zero mean and scale `sigma`.
///
/// Returns [`Error::DegenerateFeature`] when the sample standard deviation of
/// `h` is below [`DEGENERATE_STD`]: a constant vector cannot satisfy the norm
/// invariant, so it is rejected rather than smoothed.
pub fn standardize<F: Float>(h: &FeatureVector<F>, sigma: F) -> Result<StandardizedFeature<F>> {
    if sigma <= F::zero() {
        return Err(Error::ConfigParse(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let values = standardize_view(h.values(), sigma)?;
    Ok(StandardizedFeature { values, sigma })
}

/// Row-level standardization shared with the batched model forward pass.
pub fn standardize_view<F: Float>(h: ArrayView1<'_, F>, sigma: F) -> Result<Array1<F>> {
    let (mean, std) = mean_and_sample_std(h);
    if std.to_f64_lossy() < DEGENERATE_STD {
        return Err(Error::DegenerateFeature {
            sigma_h: std.to_f64_lossy(),
        });
    }
    let scale = sigma / std;
    Ok(h.mapv(|v| (v - mean) * scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn symmetric_two_element_case() {
        // sigma_h = sqrt(2), so each entry maps to ±0.5/sqrt(2) ≈ ±0.35355.
        let h = FeatureVector::new(array![1.0_f64, -1.0]).unwrap();
        let s = standardize(&h, 0.5).unwrap();
        let expected = 0.5 / 2.0_f64.sqrt();
        assert!((s.values()[0] - expected).abs() < 1e-12);
        assert!((s.values()[1] + expected).abs() < 1e-12);
        assert!((s.norm() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn norm_is_sigma_sqrt_m_minus_1_at_m_512() {
        let mut values = Vec::with_capacity(512);
        let mut state = 0x9e3779b97f4a7c15_u64;
        for _ in 0..512 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            values.push(((state >> 11) as f64) / (1u64 << 53) as f64 - 0.5);
        }
        let h = FeatureVector::new(Array1::from(values)).unwrap();
        let s = standardize(&h, 0.5).unwrap();
        let expected = 0.5 * 511.0_f64.sqrt();
        assert!((expected - 11.3027).abs() < 1e-3);
        assert!(((s.norm() - expected) / expected).abs() < 1e-12);
    }

    #[test]
    fn constant_vector_is_degenerate() {
        let h = FeatureVector::new(array![3.0_f64, 3.0, 3.0]).unwrap();
        match standardize(&h, 0.5) {
            Err(Error::DegenerateFeature { .. }) => {}
            other => panic!("expected DegenerateFeature, got {other:?}"),
        }
    }

    #[test]
    fn zero_mean_convention() {
        let h = FeatureVector::new(array![0.3_f64, 1.7, -2.2, 0.9]).unwrap();
        let s = standardize(&h, 2.5).unwrap();
        let mean: f64 = s.values().sum() / 4.0;
        assert!(mean.abs() < 1e-6);
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        let h = FeatureVector::new(array![1.0_f64, 2.0]).unwrap();
        assert!(standardize(&h, 0.0).is_err());
    }
}
