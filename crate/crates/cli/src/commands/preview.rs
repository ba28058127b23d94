use std::path::Path;

use ndarray::Axis;
use rand::rngs::StdRng;
use rand::SeedableRng;

use oodkit::checkpoint::{load_checkpoint, restore_model};
use oodkit::data::{load_split, read_benchmark, Dataset, Split};
use oodkit::error::Result;
use oodkit::model::Classifier;
use oodkit::synthesis::{compute_saliency, sparsify, synthesize, MaskGranularity};
use oodkit::train::batches_per_epoch;
use oodkit::PipelineFloat;

use crate::render::{write_preview_grid, PreviewRow};

pub fn run(checkpoint: &Path, benchmark: &Path, n: usize, out: &Path, seed: u64) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let model: Classifier<PipelineFloat> = restore_model(&ckpt)?;
    let (manifest, images) = read_benchmark(benchmark)?;
    let train: Dataset<PipelineFloat> = load_split(&manifest, &images, Split::Train)?;

    let n = n.clamp(1, train.len());
    let indices: Vec<usize> = (0..n).collect();
    let (x, labels) = train.batch(&indices);

    // Mirror the training-time synthesis at the checkpoint's final schedule
    // step (the model state previews are most informative about).
    let total_steps = match manifest.records_of(Split::Train).count() {
        n_train => match ckpt.synthesis.alpha_granularity {
            oodkit::train::AlphaGranularity::Epoch => ckpt.meta.epochs_trained.max(1),
            oodkit::train::AlphaGranularity::Step => {
                ckpt.meta.epochs_trained.max(1) * batches_per_epoch(n_train, 64)
            }
        },
    };
    let synth = ckpt.synthesis.runtime(total_steps)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let outliers = synthesize(&model, &x, &labels, &synth, total_steps - 1, &mut rng)?;

    let saliency = compute_saliency(&model, &x, &labels)?;
    let (g_inv, _) = sparsify(&saliency, synth.p_inv, MaskGranularity::Element)?;

    let rows: Vec<PreviewRow> = (0..n)
        .map(|i| {
            let input = x.data.index_axis(Axis(0), i).to_owned();
            let outlier = outliers.data.index_axis(Axis(0), i).to_owned();
            let g = g_inv.grads.index_axis(Axis(0), i);
            let mag = g.fold_axis(Axis(0), 0.0f32, |acc, v| acc.max(v.abs()));
            PreviewRow {
                input,
                saliency_mag: mag,
                outlier,
            }
        })
        .collect();
    write_preview_grid(out, &rows)?;
    println!("preview grid ({n} rows) written to {}", out.display());
    Ok(())
}
