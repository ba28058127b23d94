//! OOD-detection evaluation: AUROC and FPR@TPR over higher-is-ID score sets,
//! plus report assembly.
//!
//! AUROC follows the Mann–Whitney formulation: the probability that a random
//! in-distribution score exceeds a random OOD score, with ties counted as
//! one half. FPR@TPR picks the largest threshold `beta` that still admits the
//! requested true-positive rate on ID scores (`score ≥ beta` classifies ID)
//! and reports the fraction of OOD scores at or above it.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Float;

/// AUROC in percent (0–100) of ID-vs-OOD separation.
pub fn auroc<F: Float>(scores_id: &[F], scores_ood: &[F]) -> Result<f64> {
    if scores_id.is_empty() {
        return Err(Error::EmptySet("scores_id"));
    }
    if scores_ood.is_empty() {
        return Err(Error::EmptySet("scores_ood"));
    }
    // Rank-based Mann–Whitney U. Average ranks on ties reproduce the
    // half-credit convention exactly: all arithmetic below stays on halves,
    // which f64 represents without rounding at these sizes.
    let n_id = scores_id.len();
    let n_ood = scores_ood.len();
    let mut all: Vec<(f64, bool)> = scores_id
        .iter()
        .map(|s| (s.to_f64_lossy(), true))
        .chain(scores_ood.iter().map(|s| (s.to_f64_lossy(), false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores must not be NaN"));

    let mut rank_sum_id = 0.0_f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Tied block occupies ranks i+1 ..= j (1-based); each member gets the
        // average rank.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_id += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_id - (n_id * (n_id + 1)) as f64 / 2.0;
    Ok(u / (n_id as f64 * n_ood as f64) * 100.0)
}

/// FPR (percent) on OOD at the threshold giving at least `tpr` on ID.
///
/// The threshold is `beta = k`-th largest ID score with `k = ⌈tpr · n_id⌉`,
/// the largest value for which `#(ID ≥ beta)/n_id ≥ tpr`.
pub fn fpr_at_tpr<F: Float>(scores_id: &[F], scores_ood: &[F], tpr: f64) -> Result<f64> {
    if scores_id.is_empty() {
        return Err(Error::EmptySet("scores_id"));
    }
    if scores_ood.is_empty() {
        return Err(Error::EmptySet("scores_ood"));
    }
    if !(0.0..=1.0).contains(&tpr) || tpr == 0.0 {
        return Err(Error::ConfigParse(format!(
            "tpr must be in (0, 1], got {tpr}"
        )));
    }
    let n = scores_id.len();
    let beta = tpr_threshold(scores_id, tpr, n);
    let fp = scores_ood
        .iter()
        .filter(|s| s.to_f64_lossy() >= beta)
        .count();
    Ok(fp as f64 / scores_ood.len() as f64 * 100.0)
}

/// FPR@95, the headline operating point.
pub fn fpr_at_95<F: Float>(scores_id: &[F], scores_ood: &[F]) -> Result<f64> {
    fpr_at_tpr(scores_id, scores_ood, 0.95)
}

fn tpr_threshold<F: Float>(scores_id: &[F], tpr: f64, n: usize) -> f64 {
    // k = ⌈tpr·n⌉ with a guard against e.g. 0.95*100 = 95.000000000000001.
    let t = tpr * n as f64;
    let k = if (t - t.round()).abs() < 1e-9 {
        t.round() as usize
    } else {
        t.ceil() as usize
    };
    let k = k.clamp(1, n);
    let mut sorted: Vec<f64> = scores_id.iter().map(|s| s.to_f64_lossy()).collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("scores must not be NaN"));
    sorted[k - 1]
}

/// One (ID set, OOD set, postprocessor) evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub id_set: String,
    pub ood_set: String,
    pub postprocessor: String,
    pub fpr_at_95: f64,
    pub auroc: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

/// Full evaluation report with run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub config_digest: String,
    pub entries: Vec<EvalEntry>,
}

impl EvalReport {
    pub fn new(seed: u64, config_digest: impl Into<String>) -> Self {
        Self {
            seed,
            config_digest: config_digest.into(),
            entries: Vec::new(),
        }
    }

    /// Computes both metrics for a score pair and appends the entry.
    pub fn push_scores<F: Float>(
        &mut self,
        id_set: &str,
        ood_set: &str,
        postprocessor: &str,
        scores_id: &[F],
        scores_ood: &[F],
    ) -> Result<&EvalEntry> {
        let entry = EvalEntry {
            id_set: id_set.to_string(),
            ood_set: ood_set.to_string(),
            postprocessor: postprocessor.to_string(),
            fpr_at_95: fpr_at_95(scores_id, scores_ood)?,
            auroc: auroc(scores_id, scores_ood)?,
            n_id: scores_id.len(),
            n_ood: scores_ood.len(),
        };
        self.entries.push(entry);
        Ok(self.entries.last().unwrap())
    }

    /// Flat CSV of the entries. Column order is fixed:
    /// `id_set,ood_set,postprocessor,fpr_at_95,auroc,n_id,n_ood`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id_set,ood_set,postprocessor,fpr_at_95,auroc,n_id,n_ood\n");
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{:.4},{:.4},{},{}",
                e.id_set, e.ood_set, e.postprocessor, e.fpr_at_95, e.auroc, e.n_id, e.n_ood
            )
            .unwrap();
        }
        out
    }

    /// Structured text form of the whole report (TOML).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    /// Writes `report.toml` and `report.csv` under `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let toml_path = dir.join("report.toml");
        std::fs::write(&toml_path, self.to_toml()?).map_err(|e| Error::io(&toml_path, e))?;
        let csv_path = dir.join("report.csv");
        std::fs::write(&csv_path, self.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
        Ok(())
    }
}
