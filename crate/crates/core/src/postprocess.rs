//! OOD scoring over a trained model: MSP, temperature scaling, energy, ODIN,
//! and ODIN's selective-perturbation variants.
//!
//! All scores follow the higher-is-ID convention. ODIN perturbs the input by
//! an `epsilon`-sized sign step along the gradient of the log of the maximum
//! temperature-scaled softmax probability, then re-scores; its variants
//! restrict the perturbation to the top-`p_inv`% gradient magnitudes or to
//! the single strongest channel per pixel. Perturbation happens in the
//! normalized input domain without re-clamping.

use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::loss::{argmax_rows, softmax_rows};
use crate::metrics::auroc;
use crate::model::{DifferentiableModel, Model};
use crate::num::Float;
use crate::synthesis::top_k_count;

/// Chunk size for scoring passes; keeps im2col buffers small.
const SCORE_CHUNK: usize = 128;

/// Where ODIN applies its input perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Perturb every element — classic ODIN.
    None,
    /// Perturb only the top-`p_inv`% gradient magnitudes per image.
    TopkPercent,
    /// Perturb, per 2D pixel, only the channel with the largest gradient
    /// magnitude.
    TopChannel,
}

/// ODIN-family configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdinConfig {
    pub temperature: f64,
    pub epsilon: f64,
    pub mask_mode: MaskMode,
    /// Percentage for [`MaskMode::TopkPercent`].
    pub p_inv: f64,
}

impl OdinConfig {
    /// Classic ODIN: full-input perturbation.
    pub fn classic(temperature: f64, epsilon: f64) -> Self {
        Self {
            temperature,
            epsilon,
            mask_mode: MaskMode::None,
            p_inv: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(Error::ConfigParse(format!(
                "odin temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(Error::ConfigParse(format!(
                "odin epsilon must be nonnegative, got {}",
                self.epsilon
            )));
        }
        if self.mask_mode == MaskMode::TopkPercent
            && (!(0.0..=100.0).contains(&self.p_inv) || self.p_inv == 0.0)
        {
            return Err(Error::InvalidPercentage { value: self.p_inv });
        }
        Ok(())
    }
}

/// Scores of one postprocessor over a sample set; higher means more ID.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch {
    pub scores: Vec<f64>,
    pub postprocessor: String,
}

impl ScoreBatch {
    fn check_finite(self) -> Result<Self> {
        if let Some(bad) = self.scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "{} produced non-finite score {bad}",
                self.postprocessor
            )));
        }
        Ok(self)
    }
}

fn for_chunks<F: Float>(
    x: &ImageBatch<F>,
    mut f: impl FnMut(&ImageBatch<F>) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.len());
    let mut start = 0;
    while start < x.len() {
        let end = (start + SCORE_CHUNK).min(x.len());
        let idx: Vec<usize> = (start..end).collect();
        let chunk = x.select(&idx);
        out.extend(f(&chunk)?);
        start = end;
    }
    Ok(out)
}

/// Maximum softmax probability.
pub fn score_msp<F: Float, M: Model<F>>(model: &M, x: &ImageBatch<F>) -> Result<ScoreBatch> {
    let scores = for_chunks(x, |chunk| {
        let logits = model.logits(chunk)?;
        Ok(max_softmax_at_temperature(&logits, 1.0))
    })?;
    ScoreBatch {
        scores,
        postprocessor: "msp".into(),
    }
    .check_finite()
}

/// Maximum softmax probability at temperature `t` (no perturbation).
pub fn score_tempscale<F: Float, M: Model<F>>(
    model: &M,
    x: &ImageBatch<F>,
    t: f64,
) -> Result<ScoreBatch> {
    let scores = for_chunks(x, |chunk| {
        let logits = model.logits(chunk)?;
        Ok(max_softmax_at_temperature(&logits, t))
    })?;
    ScoreBatch {
        scores,
        postprocessor: format!("tempscale(T={t})"),
    }
    .check_finite()
}

/// Energy score `T · log Σ exp(logit / T)` (shift-equivariant logsumexp).
pub fn score_energy<F: Float, M: Model<F>>(
    model: &M,
    x: &ImageBatch<F>,
    t: f64,
) -> Result<ScoreBatch> {
    if t <= 0.0 {
        return Err(Error::ConfigParse(format!(
            "energy temperature must be positive, got {t}"
        )));
    }
    let scores = for_chunks(x, |chunk| {
        let logits = model.logits(chunk)?;
        Ok(logits
            .axis_iter(Axis(0))
            .map(|row| {
                let m = row
                    .iter()
                    .map(|v| v.to_f64_lossy())
                    .fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|v| ((v.to_f64_lossy() - m) / t).exp()).sum();
                m + t * sum.ln()
            })
            .collect())
    })?;
    ScoreBatch {
        scores,
        postprocessor: format!("energy(T={t})"),
    }
    .check_finite()
}

fn max_softmax_at_temperature<F: Float>(logits: &Array2<F>, t: f64) -> Vec<f64> {
    let scaled = logits.mapv(|v| F::from_f64_lossy(v.to_f64_lossy() / t));
    let probs = softmax_rows(scaled.view());
    probs
        .axis_iter(Axis(0))
        .map(|row| {
            row.iter()
                .map(|v| v.to_f64_lossy())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Gradient seed of `log S_max(x; T)` w.r.t. the logits: `(1_c − p) / T`
/// where `c` is the argmax of the temperature-scaled softmax.
fn odin_seed<F: Float>(logits: &Array2<F>, t: f64) -> Array2<F> {
    let scaled = logits.mapv(|v| F::from_f64_lossy(v.to_f64_lossy() / t));
    let probs = softmax_rows(scaled.view());
    let classes = argmax_rows(probs.view());
    let t_f = F::from_f64_lossy(t);
    let mut seed = probs.mapv(|p| -p / t_f);
    for (i, c) in classes.into_iter().enumerate() {
        seed[[i, c]] += F::one() / t_f;
    }
    seed
}

fn apply_odin_mask<F: Float>(grad: &mut Array4<F>, cfg: &OdinConfig) {
    match cfg.mask_mode {
        MaskMode::None => {}
        MaskMode::TopkPercent => {
            let (b, c, h, w) = {
                let s = grad.shape();
                (s[0], s[1], s[2], s[3])
            };
            for bi in 0..b {
                let mut img = grad.index_axis_mut(Axis(0), bi);
                let mut mags: Vec<F> = img.iter().map(|v| v.abs()).collect();
                let k = top_k_count(c * h * w, cfg.p_inv);
                let idx = k - 1;
                mags.select_nth_unstable_by(idx, |a, b| {
                    b.partial_cmp(a).expect("no NaN in gradient")
                });
                let threshold = mags[idx];
                for v in img.iter_mut() {
                    if v.abs() < threshold {
                        *v = F::zero();
                    }
                }
            }
        }
        MaskMode::TopChannel => {
            let (b, c, h, w) = {
                let s = grad.shape();
                (s[0], s[1], s[2], s[3])
            };
            for bi in 0..b {
                for yi in 0..h {
                    for xi in 0..w {
                        let mut best = 0usize;
                        for ci in 1..c {
                            if grad[[bi, ci, yi, xi]].abs() > grad[[bi, best, yi, xi]].abs() {
                                best = ci;
                            }
                        }
                        for ci in 0..c {
                            if ci != best {
                                grad[[bi, ci, yi, xi]] = F::zero();
                            }
                        }
                    }
                }
            }
        }
    }
}

/// ODIN / i-ODIN score: perturb the input toward higher max softmax
/// probability (`x̃ = x − ε · sign(−∇ₓ log S(x;T))`, optionally masked),
/// then return `max_i S_i(x̃; T)`.
pub fn score_odin<F: Float, M: DifferentiableModel<F>>(
    model: &M,
    x: &ImageBatch<F>,
    cfg: &OdinConfig,
) -> Result<ScoreBatch> {
    cfg.validate()?;
    let name = match cfg.mask_mode {
        MaskMode::None => format!("odin(T={},eps={})", cfg.temperature, cfg.epsilon),
        MaskMode::TopkPercent => format!(
            "iodin-topk(T={},eps={},p={})",
            cfg.temperature, cfg.epsilon, cfg.p_inv
        ),
        MaskMode::TopChannel => {
            format!("iodin-channel(T={},eps={})", cfg.temperature, cfg.epsilon)
        }
    };
    let scores = for_chunks(x, |chunk| {
        let logits = model.logits(chunk)?;
        if cfg.epsilon == 0.0 {
            return Ok(max_softmax_at_temperature(&logits, cfg.temperature));
        }
        let seed = odin_seed(&logits, cfg.temperature);
        let mut grad = model.input_gradient(chunk, &seed)?;
        apply_odin_mask(&mut grad, cfg);
        let eps = F::from_f64_lossy(cfg.epsilon);
        // x − ε·sign(−g) = x + ε·sign(g)
        let mut perturbed = chunk.data.clone();
        perturbed.zip_mut_with(&grad, |v, g| {
            *v += eps * sign_of(*g);
        });
        let perturbed = ImageBatch::new(perturbed, chunk.value_range);
        let logits = model.logits(&perturbed)?;
        Ok(max_softmax_at_temperature(&logits, cfg.temperature))
    })?;
    ScoreBatch {
        scores,
        postprocessor: name,
    }
    .check_finite()
}

fn sign_of<F: Float>(v: F) -> F {
    if v > F::zero() {
        F::one()
    } else if v < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

/// Search grid for [`tune_odin`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdinGrid {
    pub temperatures: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub mask_mode: MaskMode,
    pub p_inv: f64,
}

impl Default for OdinGrid {
    fn default() -> Self {
        Self {
            temperatures: vec![1.0, 10.0, 100.0, 1000.0],
            epsilons: vec![0.0014, 0.0028, 0.0042, 0.0056, 0.0070, 0.0084, 0.0098],
            mask_mode: MaskMode::None,
            p_inv: 100.0,
        }
    }
}

/// Exhaustive grid search maximizing validation AUROC. Ties prefer the
/// smallest epsilon, then the smallest temperature.
pub fn tune_odin<F: Float, M: DifferentiableModel<F>>(
    model: &M,
    id_val: &ImageBatch<F>,
    ood_val: &ImageBatch<F>,
    grid: &OdinGrid,
) -> Result<OdinConfig> {
    if grid.temperatures.is_empty() || grid.epsilons.is_empty() {
        return Err(Error::ConfigParse("odin grid must be non-empty".into()));
    }
    let mut best: Option<(f64, OdinConfig)> = None;
    for &t in &grid.temperatures {
        for &eps in &grid.epsilons {
            let cfg = OdinConfig {
                temperature: t,
                epsilon: eps,
                mask_mode: grid.mask_mode,
                p_inv: grid.p_inv,
            };
            let id_scores = score_odin(model, id_val, &cfg)?;
            let ood_scores = score_odin(model, ood_val, &cfg)?;
            let val = auroc(&id_scores.scores, &ood_scores.scores)?;
            let better = match &best {
                None => true,
                Some((best_val, best_cfg)) => {
                    val > *best_val
                        || (val == *best_val
                            && (eps < best_cfg.epsilon
                                || (eps == best_cfg.epsilon && t < best_cfg.temperature)))
                }
            };
            if better {
                best = Some((val, cfg));
            }
        }
    }
    Ok(best.expect("non-empty grid").1)
}

/// Runs the postprocessor described by a config entry.
pub fn score_with<F: Float, M: DifferentiableModel<F>>(
    spec: &crate::config::PostprocessorSpec,
    model: &M,
    x: &ImageBatch<F>,
) -> Result<ScoreBatch> {
    use crate::config::PostprocessorSpec as P;
    match spec {
        P::Msp => score_msp(model, x),
        P::Tempscale { temperature } => score_tempscale(model, x, *temperature),
        P::Energy { temperature } => score_energy(model, x, *temperature),
        P::Odin {
            temperature,
            epsilon,
        } => score_odin(model, x, &OdinConfig::classic(*temperature, *epsilon)),
        P::IodinTopk {
            temperature,
            epsilon,
            p_inv,
        } => score_odin(
            model,
            x,
            &OdinConfig {
                temperature: *temperature,
                epsilon: *epsilon,
                mask_mode: MaskMode::TopkPercent,
                p_inv: *p_inv,
            },
        ),
        P::IodinChannel {
            temperature,
            epsilon,
        } => score_odin(
            model,
            x,
            &OdinConfig {
                temperature: *temperature,
                epsilon: *epsilon,
                mask_mode: MaskMode::TopChannel,
                p_inv: 100.0,
            },
        ),
    }
}

/// Writes scores as a columnar text file with the fixed header
/// `sample_id,label,postprocessor,score`; label is `ID` or `OOD`.
pub fn write_score_file(
    path: &std::path::Path,
    rows: &[(String, bool, String, f64)],
) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::from("sample_id,label,postprocessor,score\n");
    for (id, is_id, post, score) in rows {
        writeln!(
            out,
            "{},{},{},{:.8}",
            id,
            if *is_id { "ID" } else { "OOD" },
            post,
            score
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses a score file produced by [`write_score_file`].
pub fn read_score_file(path: &std::path::Path) -> Result<Vec<(String, bool, String, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line != "sample_id,label,postprocessor,score" {
                return Err(Error::ConfigParse(format!(
                    "unexpected score file header: {line}"
                )));
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::ConfigParse(format!(
                "malformed score row {}: {line}",
                lineno + 1
            )));
        }
        let is_id = match parts[1] {
            "ID" => true,
            "OOD" => false,
            other => {
                return Err(Error::ConfigParse(format!(
                    "unknown label `{other}` in score file"
                )))
            }
        };
        let score: f64 = parts[3]
            .parse()
            .map_err(|_| Error::ConfigParse(format!("bad score `{}`", parts[3])))?;
        rows.push((parts[0].to_string(), is_id, parts[2].to_string(), score));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::LinearImageModel;
    use ndarray::{array, Array2, Array4};

    fn model_with_weights(w: Array2<f64>, shape: (usize, usize, usize)) -> LinearImageModel {
        LinearImageModel { w, shape }
    }

    fn single_pixel_batch(values: &[f64]) -> ImageBatch<f64> {
        let b = values.len();
        let data = Array4::from_shape_vec((b, 1, 1, 1), values.to_vec()).unwrap();
        ImageBatch::unit_range(data)
    }

    #[test]
    fn msp_uniform_logits_is_inverse_c() {
        let w = Array2::zeros((10, 1));
        let model = model_with_weights(w, (1, 1, 1));
        let x = single_pixel_batch(&[0.3]);
        let s = score_msp(&model, &x).unwrap();
        assert!((s.scores[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn msp_saturates_with_margin() {
        let w = array![[1000.0_f64], [-1000.0]];
        let model = model_with_weights(w, (1, 1, 1));
        let x = single_pixel_batch(&[1.0]);
        let s = score_msp(&model, &x).unwrap();
        assert_eq!(s.scores[0], 1.0);
    }

    #[test]
    fn msp_two_class_hand_value() {
        // logits [ln 3, 0] → p = [0.75, 0.25].
        let w = array![[3.0_f64.ln()], [0.0]];
        let model = model_with_weights(w, (1, 1, 1));
        let x = single_pixel_batch(&[1.0]);
        let s = score_msp(&model, &x).unwrap();
        assert!((s.scores[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn energy_of_equal_logits_is_log_2() {
        let w = Array2::zeros((2, 1));
        let model = model_with_weights(w, (1, 1, 1));
        let x = single_pixel_batch(&[0.5]);
        let s = score_energy(&model, &x, 1.0).unwrap();
        assert!((s.scores[0] - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn energy_scalar_evaluation() {
        // logits [1, 2, 3] → log(e + e² + e³).
        let w = array![[1.0_f64], [2.0], [3.0]];
        let model = model_with_weights(w, (1, 1, 1));
        let x = single_pixel_batch(&[1.0]);
        let s = score_energy(&model, &x, 1.0).unwrap();
        let expected = (1.0_f64.exp() + 2.0_f64.exp() + 3.0_f64.exp()).ln();
        assert!((expected - 3.40761).abs() < 1e-5);
        assert!((s.scores[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn energy_shift_property() {
        let w = array![[1.0_f64], [2.0], [3.0]];
        let model = model_with_weights(w.clone(), (1, 1, 1));
        let shifted = model_with_weights(w + 5.0, (1, 1, 1));
        let x = single_pixel_batch(&[1.0]);
        let a = score_energy(&model, &x, 1.0).unwrap().scores[0];
        let b = score_energy(&shifted, &x, 1.0).unwrap().scores[0];
        assert!((b - a - 5.0).abs() < 1e-9);
    }

    #[test]
    fn odin_degenerates_to_msp_for_all_mask_modes() {
        let w = array![[0.9_f64, -0.3], [0.1, 0.4]];
        let model = model_with_weights(w, (1, 1, 2));
        let data = Array4::from_shape_vec((3, 1, 1, 2), vec![0.2, 0.7, 0.9, 0.1, 0.4, 0.6])
            .unwrap();
        let x = ImageBatch::unit_range(data);
        let msp = score_msp(&model, &x).unwrap();
        for mask_mode in [MaskMode::None, MaskMode::TopkPercent, MaskMode::TopChannel] {
            let cfg = OdinConfig {
                temperature: 1.0,
                epsilon: 0.0,
                mask_mode,
                p_inv: 50.0,
            };
            let odin = score_odin(&model, &x, &cfg).unwrap();
            for (a, b) in odin.scores.iter().zip(msp.scores.iter()) {
                assert!((a - b).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn topk_full_percentage_equals_unmasked() {
        let w = array![[0.9_f64, -0.3, 0.2, 0.5], [0.1, 0.4, -0.6, 0.3]];
        let model = model_with_weights(w, (1, 2, 2));
        let data = Array4::from_shape_fn((2, 1, 2, 2), |(b, _, i, j)| {
            ((b * 7 + i * 3 + j) as f64 * 0.41).sin()
        });
        let x = ImageBatch::unit_range(data);
        let full = OdinConfig {
            temperature: 10.0,
            epsilon: 0.01,
            mask_mode: MaskMode::TopkPercent,
            p_inv: 100.0,
        };
        let none = OdinConfig {
            temperature: 10.0,
            epsilon: 0.01,
            mask_mode: MaskMode::None,
            p_inv: 100.0,
        };
        let a = score_odin(&model, &x, &full).unwrap();
        let b = score_odin(&model, &x, &none).unwrap();
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn mask_cardinalities() {
        // topk keeps ⌈p%·n⌉ entries; top_channel keeps exactly H·W.
        let mut grad = Array4::from_shape_fn((1, 3, 4, 4), |(_, c, i, j)| {
            ((c * 16 + i * 4 + j) as f64 + 1.0) * 0.01
        });
        let cfg = OdinConfig {
            temperature: 1.0,
            epsilon: 0.1,
            mask_mode: MaskMode::TopkPercent,
            p_inv: 10.0,
        };
        apply_odin_mask(&mut grad, &cfg);
        let kept = grad.iter().filter(|v| **v != 0.0).count();
        assert_eq!(kept, top_k_count(48, 10.0));
        assert_eq!(kept, 5); // ⌈4.8⌉

        let mut grad = Array4::from_shape_fn((2, 3, 4, 4), |(b, c, i, j)| {
            ((b * 48 + c * 16 + i * 4 + j) as f64 + 1.0) * 0.01
        });
        let cfg = OdinConfig {
            temperature: 1.0,
            epsilon: 0.1,
            mask_mode: MaskMode::TopChannel,
            p_inv: 100.0,
        };
        apply_odin_mask(&mut grad, &cfg);
        let kept = grad.iter().filter(|v| **v != 0.0).count();
        assert_eq!(kept, 2 * 16);
    }

    #[test]
    fn tune_single_point_grid_returns_it() {
        let w = array![[0.9_f64], [0.1]];
        let model = model_with_weights(w, (1, 1, 1));
        let id = single_pixel_batch(&[0.9, 0.8]);
        let ood = single_pixel_batch(&[0.1, 0.2]);
        let grid = OdinGrid {
            temperatures: vec![17.0],
            epsilons: vec![0.004],
            mask_mode: MaskMode::None,
            p_inv: 100.0,
        };
        let cfg = tune_odin(&model, &id, &ood, &grid).unwrap();
        assert_eq!(cfg.temperature, 17.0);
        assert_eq!(cfg.epsilon, 0.004);
    }

    #[test]
    fn tune_breaks_ties_toward_smallest_eps_then_t() {
        // Two-class linear model with every sample predicted class 0: the
        // perturbation shifts all margins by the same constant, so AUROC is
        // identical across the grid and the tie-break must pick ε=0, T=1.
        let w = array![[1.0_f64, 0.5], [-1.0, -0.5]];
        let model = model_with_weights(w, (1, 1, 2));
        let id = ImageBatch::unit_range(
            Array4::from_shape_vec((2, 1, 1, 2), vec![0.9, 0.8, 0.7, 0.9]).unwrap(),
        );
        let ood = ImageBatch::unit_range(
            Array4::from_shape_vec((2, 1, 1, 2), vec![0.2, 0.1, 0.3, 0.2]).unwrap(),
        );
        let grid = OdinGrid {
            temperatures: vec![1000.0, 1.0, 10.0],
            epsilons: vec![0.01, 0.0, 0.005],
            mask_mode: MaskMode::None,
            p_inv: 100.0,
        };
        let cfg = tune_odin(&model, &id, &ood, &grid).unwrap();
        assert_eq!(cfg.epsilon, 0.0);
        assert_eq!(cfg.temperature, 1.0);
    }

    #[test]
    fn default_grid_uses_seven_noise_values() {
        let grid = OdinGrid::default();
        assert_eq!(
            grid.epsilons,
            vec![0.0014, 0.0028, 0.0042, 0.0056, 0.0070, 0.0084, 0.0098]
        );
    }

    #[test]
    fn score_file_round_trips() {
        let dir = std::env::temp_dir().join("oodkit-score-file-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("scores.csv");
        let rows = vec![
            ("id-0".to_string(), true, "msp".to_string(), 0.93),
            ("ood-0".to_string(), false, "msp".to_string(), 0.51),
        ];
        write_score_file(&path, &rows).unwrap();
        let back = read_score_file(&path).unwrap();
        assert_eq!(back, rows);
        std::fs::remove_dir_all(&dir).ok();
    }
}
