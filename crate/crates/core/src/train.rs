//! Training: SGD with momentum over the joint objective
//! `L_CE(x) + lambda · L_KL(x')`, with outliers synthesized from the
//! pre-update model within each batch, plus the plain cross-entropy baseline
//! the joint trainer must degenerate to.

use ndarray::Axis;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{augment_batch, Dataset};
use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::loss::{argmax_rows, kl_to_uniform_mean, log_softmax_rows, one_hot, softmax_rows};
use crate::model::{Classifier, ClassifierGrads, FeatureMode};
use crate::num::Float;
use crate::synthesis::{synthesize, SynthesisConfig, SynthesisMethod};

/// Batches between sampled checks of the standardized-norm invariant.
const NORM_CHECK_EVERY: usize = 16;

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    5e-4
}

fn default_batch_size() -> usize {
    64
}

/// SGD hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    /// Separate learning rate for the final linear layer, when set.
    #[serde(default)]
    pub fc_lr: Option<f64>,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::ConfigParse(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::ConfigParse("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigParse("batch_size must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// SGD with momentum and decoupled-by-layer learning rates.
pub struct SgdOptimizer<F: Float> {
    cfg: OptimizerConfig,
    velocity: ClassifierGrads<F>,
}

impl<F: Float> SgdOptimizer<F> {
    pub fn new(model: &Classifier<F>, cfg: OptimizerConfig) -> Self {
        let velocity = ClassifierGrads {
            blocks: model
                .backbone
                .blocks
                .iter()
                .map(|b| {
                    (
                        ndarray::Array2::zeros(b.weight.raw_dim()),
                        ndarray::Array1::zeros(b.bias.raw_dim()),
                    )
                })
                .collect(),
            head: (
                ndarray::Array2::zeros(model.head.weight.raw_dim()),
                ndarray::Array1::zeros(model.head.bias.raw_dim()),
            ),
        };
        Self { cfg, velocity }
    }

    /// `v ← μ·v − lr·(g + wd·w); w ← w + v` for every parameter tensor.
    pub fn step(&mut self, model: &mut Classifier<F>, grads: &ClassifierGrads<F>) {
        let mu = F::from_f64_lossy(self.cfg.momentum);
        let wd = F::from_f64_lossy(self.cfg.weight_decay);
        let lr = F::from_f64_lossy(self.cfg.lr);
        let fc_lr = F::from_f64_lossy(self.cfg.fc_lr.unwrap_or(self.cfg.lr));

        for (i, block) in model.backbone.blocks.iter_mut().enumerate() {
            let (vw, vb) = &mut self.velocity.blocks[i];
            let (gw, gb) = &grads.blocks[i];
            ndarray::Zip::from(vw.view_mut())
                .and(gw)
                .and(&block.weight)
                .for_each(|v, g, w| *v = mu * *v - lr * (*g + wd * *w));
            block.weight += &*vw;
            ndarray::Zip::from(vb.view_mut())
                .and(gb)
                .and(&block.bias)
                .for_each(|v, g, w| *v = mu * *v - lr * (*g + wd * *w));
            block.bias += &*vb;
        }
        let (vw, vb) = &mut self.velocity.head;
        ndarray::Zip::from(vw.view_mut())
            .and(&grads.head.0)
            .and(&model.head.weight)
            .for_each(|v, g, w| *v = mu * *v - fc_lr * (*g + wd * *w));
        model.head.weight += &*vw;
        ndarray::Zip::from(vb.view_mut())
            .and(&grads.head.1)
            .and(&model.head.bias)
            .for_each(|v, g, w| *v = mu * *v - fc_lr * (*g + wd * *w));
        model.head.bias += &*vb;
    }
}

/// Per-epoch aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub ce: f64,
    pub kl: f64,
    pub accuracy: f64,
    pub alpha: f64,
}

/// Shared ID pass: forward, cross-entropy value, gradient seed, backward.
/// Both the joint trainer and the plain-CE baseline call exactly this, which
/// is what makes their trajectories bit-identical when the outlier branch is
/// inert.
fn ce_forward_backward<F: Float>(
    model: &Classifier<F>,
    x: &ImageBatch<F>,
    labels: &[usize],
    check_norms: bool,
) -> Result<(ClassifierGrads<F>, f64, usize)> {
    let (out, cache) = model.forward_cached(x, model.cfg.feature_mode)?;
    if check_norms && model.cfg.feature_mode == FeatureMode::Standardized {
        verify_norm_invariant(model, &out.std_features)?;
    }
    let targets = one_hot::<F>(labels, model.cfg.num_classes);
    let logp = log_softmax_rows(out.logits.view());
    let b = labels.len();
    let ce = -labels
        .iter()
        .enumerate()
        .map(|(i, &y)| logp[[i, y]].to_f64_lossy())
        .sum::<f64>()
        / b as f64;
    let correct = argmax_rows(out.logits.view())
        .into_iter()
        .zip(labels)
        .filter(|(p, y)| p == *y)
        .count();
    let mut d_logits = softmax_rows(out.logits.view());
    d_logits -= &targets;
    let scale = F::from_usize_lossy(b);
    d_logits.mapv_inplace(|v| v / scale);
    let (grads, _) = model.backward(&cache, &d_logits, true, false);
    Ok((grads.expect("param grads requested"), ce, correct))
}

fn verify_norm_invariant<F: Float>(model: &Classifier<F>, std_features: &ndarray::Array2<F>) -> Result<()> {
    let m = model.cfg.feature_dim;
    let expected = model.cfg.sigma * ((m - 1) as f64).sqrt();
    for row in std_features.axis_iter(Axis(0)) {
        let norm = row.iter().map(|v| (*v) * (*v)).sum::<F>().sqrt().to_f64_lossy();
        if ((norm - expected) / expected).abs() > 1e-3 {
            return Err(Error::NumericFailure(format!(
                "standardized norm {norm} drifted from {expected}"
            )));
        }
    }
    Ok(())
}

/// One epoch of joint training. Per batch: synthesize outliers from the
/// pre-update model, then take one optimizer step on
/// `L_CE(x) + lambda·L_KL(x')`. Returns the epoch aggregates.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<F: Float>(
    model: &mut Classifier<F>,
    ds: &Dataset<F>,
    synth: &SynthesisConfig,
    lambda: f64,
    opt: &mut SgdOptimizer<F>,
    rng: &mut StdRng,
    epoch: usize,
    alpha_step_base: usize,
    alpha_step_per_batch: bool,
) -> Result<EpochStats> {
    let n = ds.len();
    let batch_size = opt.cfg.batch_size;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    // The outlier branch is completely inert in the degenerate baseline
    // configuration; skipping it keeps this loop bit-identical to the plain
    // cross-entropy trainer.
    let outlier_active = !(lambda == 0.0 && synth.method == SynthesisMethod::Identity);
    let lambda_f = F::from_f64_lossy(lambda);

    let mut ce_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut kl_batches = 0.0;
    let mut correct = 0usize;
    let mut alpha_used = 0.0;
    let mut batch_index = 0usize;

    for chunk in order.chunks(batch_size) {
        let (mut x, labels) = ds.batch(chunk);
        augment_batch(&mut x, &ds.transform, rng);

        let step = if alpha_step_per_batch {
            alpha_step_base + batch_index
        } else {
            alpha_step_base
        };

        let outliers = if outlier_active {
            let x_prime = synthesize(model, &x, &labels, synth, step, rng)?;
            if let Some(schedule) = &synth.alpha {
                alpha_used = schedule.value_at(step)?;
            }
            Some(x_prime)
        } else {
            None
        };

        let check = batch_index % NORM_CHECK_EVERY == 0;
        let (mut grads, ce, batch_correct) = ce_forward_backward(model, &x, &labels, check)?;
        if !ce.is_finite() {
            return Err(Error::NumericFailure(format!(
                "cross-entropy became {ce} at epoch {epoch}"
            )));
        }
        ce_sum += ce * labels.len() as f64;
        correct += batch_correct;

        if let Some(x_prime) = outliers {
            let (out, cache) = model.forward_cached(&x_prime, model.cfg.feature_mode)?;
            let kl = kl_to_uniform_mean(out.logits.view()).to_f64_lossy();
            if !kl.is_finite() {
                return Err(Error::NumericFailure(format!(
                    "kl term became {kl} at epoch {epoch}"
                )));
            }
            kl_sum += kl;
            kl_batches += 1.0;
            let bp = F::from_usize_lossy(x_prime.len());
            let inv_c = F::one() / F::from_usize_lossy(model.cfg.num_classes);
            let mut d_logits = softmax_rows(out.logits.view());
            d_logits.mapv_inplace(|v| lambda_f * (v - inv_c) / bp);
            let (kl_grads, _) = model.backward(&cache, &d_logits, true, false);
            grads.scaled_add(F::one(), &kl_grads.expect("param grads requested"));
        }

        opt.step(model, &grads);
        batch_index += 1;
    }

    Ok(EpochStats {
        epoch,
        ce: ce_sum / n as f64,
        kl: if kl_batches > 0.0 { kl_sum / kl_batches } else { 0.0 },
        accuracy: correct as f64 / n as f64,
        alpha: alpha_used,
    })
}

/// One epoch of plain cross-entropy training: the reference baseline. Batch
/// assembly, augmentation, forward, backward, and the optimizer step are the
/// same code the joint trainer runs.
pub fn train_epoch_ce<F: Float>(
    model: &mut Classifier<F>,
    ds: &Dataset<F>,
    opt: &mut SgdOptimizer<F>,
    rng: &mut StdRng,
    epoch: usize,
) -> Result<EpochStats> {
    let n = ds.len();
    let batch_size = opt.cfg.batch_size;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut ce_sum = 0.0;
    let mut correct = 0usize;
    for (batch_index, chunk) in order.chunks(batch_size).enumerate() {
        let (mut x, labels) = ds.batch(chunk);
        augment_batch(&mut x, &ds.transform, rng);
        let check = batch_index % NORM_CHECK_EVERY == 0;
        let (grads, ce, batch_correct) = ce_forward_backward(model, &x, &labels, check)?;
        if !ce.is_finite() {
            return Err(Error::NumericFailure(format!(
                "cross-entropy became {ce} at epoch {epoch}"
            )));
        }
        ce_sum += ce * labels.len() as f64;
        correct += batch_correct;
        opt.step(model, &grads);
    }
    Ok(EpochStats {
        epoch,
        ce: ce_sum / n as f64,
        kl: 0.0,
        accuracy: correct as f64 / n as f64,
        alpha: 0.0,
    })
}

/// How the outlier-strength schedule is indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaGranularity {
    /// One schedule step per epoch.
    Epoch,
    /// One schedule step per optimizer step.
    Step,
}

impl Default for AlphaGranularity {
    fn default() -> Self {
        AlphaGranularity::Epoch
    }
}

/// Number of batches one epoch takes.
pub fn batches_per_epoch(n_samples: usize, batch_size: usize) -> usize {
    n_samples.div_ceil(batch_size)
}

/// Runs the full joint training loop. `start_epoch` continues numbering when
/// resuming from a checkpoint.
pub fn train_joint<F: Float>(
    model: &mut Classifier<F>,
    ds: &Dataset<F>,
    synth: &SynthesisConfig,
    lambda: f64,
    granularity: AlphaGranularity,
    opt_cfg: &OptimizerConfig,
    seed: u64,
    start_epoch: usize,
) -> Result<Vec<EpochStats>> {
    opt_cfg.validate()?;
    synth.validate()?;
    let mut opt = SgdOptimizer::new(model, opt_cfg.clone());
    let mut rng = StdRng::seed_from_u64(seed);
    let bpe = batches_per_epoch(ds.len(), opt_cfg.batch_size);
    let mut log = Vec::with_capacity(opt_cfg.epochs);
    for e in 0..opt_cfg.epochs {
        let epoch = start_epoch + e;
        let (base, per_batch) = match granularity {
            AlphaGranularity::Epoch => (epoch, false),
            AlphaGranularity::Step => (epoch * bpe, true),
        };
        let stats = train_epoch(
            model, ds, synth, lambda, &mut opt, &mut rng, epoch, base, per_batch,
        )?;
        log.push(stats);
    }
    Ok(log)
}

/// Runs the plain cross-entropy baseline loop with the same seeding scheme.
pub fn train_ce<F: Float>(
    model: &mut Classifier<F>,
    ds: &Dataset<F>,
    opt_cfg: &OptimizerConfig,
    seed: u64,
    start_epoch: usize,
) -> Result<Vec<EpochStats>> {
    opt_cfg.validate()?;
    let mut opt = SgdOptimizer::new(model, opt_cfg.clone());
    let mut rng = StdRng::seed_from_u64(seed);
    let mut log = Vec::with_capacity(opt_cfg.epochs);
    for e in 0..opt_cfg.epochs {
        let stats = train_epoch_ce(model, ds, &mut opt, &mut rng, start_epoch + e)?;
        log.push(stats);
    }
    Ok(log)
}

/// Classification accuracy over a labeled dataset, evaluated in chunks.
pub fn evaluate_accuracy<F: Float>(model: &Classifier<F>, ds: &Dataset<F>) -> Result<f64> {
    if ds.labels.is_empty() {
        return Err(Error::ConfigParse(
            "accuracy needs a labeled dataset".into(),
        ));
    }
    let mut correct = 0usize;
    let mut start = 0usize;
    while start < ds.len() {
        let end = (start + 256).min(ds.len());
        let idx: Vec<usize> = (start..end).collect();
        let (x, labels) = ds.batch(&idx);
        let out = model.forward(&x)?;
        correct += argmax_rows(out.logits.view())
            .into_iter()
            .zip(&labels)
            .filter(|(p, y)| p == *y)
            .count();
        start = end;
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Serializes epoch stats as the training-log CSV
/// (`epoch,ce,kl,accuracy,alpha`).
pub fn training_log_csv(log: &[EpochStats]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("epoch,ce,kl,accuracy,alpha\n");
    for row in log {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.4},{:.4}",
            row.epoch, row.ce, row.kl, row.accuracy, row.alpha
        )
        .unwrap();
    }
    out
}
