use std::collections::BTreeMap;
use std::path::Path;

use oodkit::error::{Error, Result};
use oodkit::postprocess::read_score_file;

use crate::render::{write_score_histogram, HistPanel};

pub fn run(scores: &Path, out: &Path, bins: usize) -> Result<()> {
    let rows = read_score_file(scores)?;
    if rows.is_empty() {
        return Err(Error::ConfigParse(format!(
            "score file {} has no rows",
            scores.display()
        )));
    }
    let mut grouped: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (_, is_id, post, score) in rows {
        let entry = grouped.entry(post).or_default();
        if is_id {
            entry.0.push(score);
        } else {
            entry.1.push(score);
        }
    }
    let panels: Vec<HistPanel> = grouped
        .into_iter()
        .map(|(postprocessor, (id_scores, ood_scores))| HistPanel {
            postprocessor,
            id_scores,
            ood_scores,
        })
        .collect();
    write_score_histogram(out, &panels, bins)?;
    println!("histogram written to {}", out.display());
    Ok(())
}
