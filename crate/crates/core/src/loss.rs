//! The joint training objective: in-distribution cross-entropy plus a
//! KL-to-uniform uncertainty term on synthesized outliers,
//! `L_total = L_CE + lambda · L_KL`.
//!
//! The KL term measures how far the outlier softmax `p'` is from the uniform
//! distribution with `U` as the target: `KL(U ‖ p') = −log C − (1/C)·Σ log
//! p'`. That is the direction whose logit gradient is exactly `p' − 1/C`,
//! the identity the training backward pass and the gradient tests are
//! anchored to (the reverse direction has gradient `p'·(log p' − Σ p' log
//! p')` and would break it). Both terms are batch means, so `lambda` keeps
//! its meaning across batch sizes.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::num::Float;

/// One evaluation of the joint objective, split into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<F: Float> {
    /// Mean cross-entropy of the in-distribution batch.
    pub ce: F,
    /// Mean uniform-target KL of the outlier batch. Nonnegative.
    pub kl: F,
    /// Weight on the KL term.
    pub lambda: F,
    /// `ce + lambda * kl`, exactly as computed.
    pub total: F,
}

/// Numerically stable softmax over each row.
pub fn softmax_rows<F: Float>(logits: ArrayView2<'_, F>) -> Array2<F> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise log-softmax (`z − logsumexp(z)`), the stable route to both loss
/// terms.
pub fn log_softmax_rows<F: Float>(logits: ArrayView2<'_, F>) -> Array2<F> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let lse = max + row.iter().map(|v| (*v - max).exp()).sum::<F>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Mean cross-entropy of `softmax(logits)` against one-hot `labels`.
pub fn cross_entropy_mean<F: Float>(
    logits: ArrayView2<'_, F>,
    labels: ArrayView2<'_, F>,
) -> Result<F> {
    if logits.shape() != labels.shape() {
        return Err(Error::shape_mismatch(
            "cross_entropy logits vs labels",
            logits.shape(),
            labels.shape(),
        ));
    }
    let logp = log_softmax_rows(logits);
    let b = F::from_usize_lossy(logits.nrows());
    let nll = logp
        .rows()
        .into_iter()
        .zip(labels.rows())
        .map(|(lp, y)| -lp.iter().zip(y.iter()).map(|(l, y)| *y * *l).sum::<F>())
        .sum::<F>();
    Ok(nll / b)
}

/// Mean over rows of the uniform-target divergence
/// `KL(U ‖ softmax(logits)) = −log C − (1/C)·Σ log p`.
///
/// Zero exactly when a row's logits are all equal; nonnegative everywhere
/// (residues below 1e-12 from a row's logsumexp rounding snap to zero).
pub fn kl_to_uniform_mean<F: Float>(logits: ArrayView2<'_, F>) -> F {
    if logits.nrows() == 0 {
        return F::zero();
    }
    let c = F::from_usize_lossy(logits.ncols());
    let ln_c = c.ln();
    let floor = F::from_f64_lossy(1e-12);
    let logp = log_softmax_rows(logits);
    let total = logp
        .rows()
        .into_iter()
        .map(|row| {
            let kl = -ln_c - row.sum() / c;
            if kl < floor {
                F::zero()
            } else {
                kl
            }
        })
        .sum::<F>();
    total / F::from_usize_lossy(logits.nrows())
}

fn validate_one_hot<F: Float>(labels: ArrayView2<'_, F>) -> Result<()> {
    for (i, row) in labels.rows().into_iter().enumerate() {
        let mut ones = 0usize;
        for v in row.iter() {
            if *v == F::one() {
                ones += 1;
            } else if *v != F::zero() {
                return Err(Error::ConfigParse(format!(
                    "labels row {i} is not one-hot (entry {v})"
                )));
            }
        }
        if ones != 1 {
            return Err(Error::ConfigParse(format!(
                "labels row {i} has {ones} ones, expected exactly 1"
            )));
        }
    }
    Ok(())
}

/// Evaluates the joint objective `L_CE(id) + lambda · L_KL(ood)`.
///
/// `logits_id` is `[B × C]`, `labels` one-hot `[B × C]`, `logits_ood`
/// `[B' × C]`. The class count `C` must agree between the two logit blocks.
pub fn loss_total<F: Float>(
    logits_id: ArrayView2<'_, F>,
    labels: ArrayView2<'_, F>,
    logits_ood: ArrayView2<'_, F>,
    lambda: F,
) -> Result<LossBreakdown<F>> {
    let c = logits_id.ncols();
    if c < 2 {
        return Err(Error::ConfigParse(format!(
            "need at least 2 classes, got {c}"
        )));
    }
    if logits_ood.ncols() != c {
        return Err(Error::shape_mismatch(
            "class count of id vs ood logits",
            logits_id.shape(),
            logits_ood.shape(),
        ));
    }
    validate_one_hot(labels)?;
    let ce = cross_entropy_mean(logits_id, labels)?;
    let kl = kl_to_uniform_mean(logits_ood);
    Ok(LossBreakdown {
        ce,
        kl,
        lambda,
        total: ce + lambda * kl,
    })
}

/// The closed-form logit gradient of `L_CE + L_KL` for a single sample pair:
/// row 0 is `p_id − y`, row 1 is `p_ood − 1/C`.
///
/// This is the analytic anchor the training backward pass and the
/// finite-difference oracle are both checked against.
pub fn analytic_logit_gradient<F: Float>(
    p_id: ArrayView1<'_, F>,
    y: ArrayView1<'_, F>,
    p_ood: ArrayView1<'_, F>,
    num_classes: usize,
) -> Result<Array2<F>> {
    if p_id.len() != num_classes || y.len() != num_classes || p_ood.len() != num_classes {
        return Err(Error::shape_mismatch(
            "analytic gradient inputs vs num_classes",
            &[p_id.len(), y.len(), p_ood.len()],
            &[num_classes; 3],
        ));
    }
    let inv_c = F::one() / F::from_usize_lossy(num_classes);
    let mut out = Array2::zeros((2, num_classes));
    for k in 0..num_classes {
        out[[0, k]] = p_id[k] - y[k];
        out[[1, k]] = p_ood[k] - inv_c;
    }
    Ok(out)
}

/// Gradient seeds of the batched joint loss w.r.t. both logit blocks:
/// `(p − y)/B` for the in-distribution block and `lambda · (p' − 1/C)/B'`
/// for the outlier block.
pub fn loss_logit_gradients<F: Float>(
    logits_id: ArrayView2<'_, F>,
    labels: ArrayView2<'_, F>,
    logits_ood: ArrayView2<'_, F>,
    lambda: F,
) -> (Array2<F>, Array2<F>) {
    let b = F::from_usize_lossy(logits_id.nrows().max(1));
    let mut d_id = softmax_rows(logits_id);
    d_id -= &labels;
    d_id.mapv_inplace(|v| v / b);

    let bp = F::from_usize_lossy(logits_ood.nrows().max(1));
    let inv_c = F::one() / F::from_usize_lossy(logits_ood.ncols());
    let mut d_ood = softmax_rows(logits_ood);
    d_ood.mapv_inplace(|v| lambda * (v - inv_c) / bp);
    (d_id, d_ood)
}

/// One-hot encoding of integer labels.
pub fn one_hot<F: Float>(labels: &[usize], num_classes: usize) -> Array2<F> {
    let mut out = Array2::zeros((labels.len(), num_classes));
    for (i, &y) in labels.iter().enumerate() {
        out[[i, y]] = F::one();
    }
    out
}

/// Row-wise argmax of a logits/probability matrix.
pub fn argmax_rows<F: Float>(m: ArrayView2<'_, F>) -> Vec<usize> {
    m.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Batch classification accuracy against integer labels.
pub fn accuracy<F: Float>(logits: ArrayView2<'_, F>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let pred = argmax_rows(logits);
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}
