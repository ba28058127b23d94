use std::path::{Path, PathBuf};

use oodkit::checkpoint::{load_checkpoint, restore_model};
use oodkit::config::PostprocessorSpec;
use oodkit::data::{load_image_folder, load_split, read_benchmark, Dataset, Split, TransformSpec};
use oodkit::error::{Error, Result};
use oodkit::metrics::EvalReport;
use oodkit::model::Classifier;
use oodkit::postprocess::{score_with, tune_odin, write_score_file, OdinGrid};
use oodkit::PipelineFloat;

use crate::postspec::parse_post;

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub benchmark: Option<PathBuf>,
    pub id: Option<PathBuf>,
    pub ood: Vec<String>,
    pub post: Vec<String>,
    pub tune_odin: Option<PathBuf>,
    pub resize: Option<(usize, usize)>,
    pub out: PathBuf,
    pub seed: u64,
}

fn folder_dataset(dir: &Path, resize: Option<(usize, usize)>) -> Result<Dataset<PipelineFloat>> {
    load_image_folder(
        dir,
        &TransformSpec {
            resize,
            random_horizontal_flip: false,
            random_resized_crop: None,
        },
    )
}

/// Loads a named evaluation set: a benchmark split directory reference
/// (`<dir>` containing meta.toml) or a plain image folder.
fn load_eval_set(dir: &Path, resize: Option<(usize, usize)>) -> Result<Dataset<PipelineFloat>> {
    if dir.join("meta.toml").is_file() {
        let (manifest, images) = read_benchmark(dir)?;
        return load_split(&manifest, &images, Split::TestId);
    }
    folder_dataset(dir, resize)
}

pub fn run(args: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let model: Classifier<PipelineFloat> = restore_model(&ckpt)?;

    // Assemble (name, dataset) pairs for ID and each OOD set.
    let mut ood_sets: Vec<(String, Dataset<PipelineFloat>)> = Vec::new();
    let id_set: (String, Dataset<PipelineFloat>) = match (&args.benchmark, &args.id) {
        (Some(dir), None) => {
            let (manifest, images) = read_benchmark(dir)?;
            let id = load_split(&manifest, &images, Split::TestId)?;
            for split in [Split::SpuriousOod, Split::ConventionalOod, Split::FineGrainedOod] {
                if let Ok(ds) = load_split::<PipelineFloat>(&manifest, &images, split) {
                    ood_sets.push((split.as_str().to_string(), ds));
                }
            }
            ("test_id".to_string(), id)
        }
        (None, Some(dir)) => (
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "id".into()),
            load_eval_set(dir, args.resize)?,
        ),
        _ => {
            return Err(Error::ConfigParse(
                "eval needs exactly one of --benchmark or --id".into(),
            ))
        }
    };
    for spec in &args.ood {
        let (name, dir) = spec.split_once('=').ok_or_else(|| {
            Error::ConfigParse(format!("--ood expects name=dir, got `{spec}`"))
        })?;
        ood_sets.push((name.to_string(), load_eval_set(Path::new(dir), args.resize)?));
    }
    if ood_sets.is_empty() {
        return Err(Error::ConfigParse("no OOD sets to evaluate".into()));
    }

    let mut posts: Vec<PostprocessorSpec> = args
        .post
        .iter()
        .map(|s| parse_post(s))
        .collect::<Result<_>>()?;
    if posts.is_empty() {
        posts = vec![
            PostprocessorSpec::Msp,
            PostprocessorSpec::Energy { temperature: 1.0 },
        ];
    }

    // Optional ODIN grid search against a validation OOD set.
    if let Some(val_dir) = &args.tune_odin {
        let val_ood = load_eval_set(val_dir, args.resize)?;
        let tuned = tune_odin(
            &model,
            &id_set.1.to_image_batch(),
            &val_ood.to_image_batch(),
            &OdinGrid::default(),
        )?;
        println!(
            "tuned odin: T={}, eps={}",
            tuned.temperature, tuned.epsilon
        );
        posts.push(PostprocessorSpec::Odin {
            temperature: tuned.temperature,
            epsilon: tuned.epsilon,
        });
    }

    let digest = ckpt.meta.config_digest.clone();
    let mut report = EvalReport::new(args.seed, digest);
    let mut score_rows: Vec<(String, bool, String, f64)> = Vec::new();

    let id_batch = id_set.1.to_image_batch();
    for post in &posts {
        let id_scores = score_with(post, &model, &id_batch)?;
        for (sid, s) in id_set.1.sample_ids.iter().zip(&id_scores.scores) {
            score_rows.push((sid.clone(), true, id_scores.postprocessor.clone(), *s));
        }
        for (name, ds) in &ood_sets {
            let ood_scores = score_with(post, &model, &ds.to_image_batch())?;
            for (sid, s) in ds.sample_ids.iter().zip(&ood_scores.scores) {
                score_rows.push((sid.clone(), false, ood_scores.postprocessor.clone(), *s));
            }
            let entry = report.push_scores(
                &id_set.0,
                name,
                &id_scores.postprocessor,
                &id_scores.scores,
                &ood_scores.scores,
            )?;
            println!(
                "{:<28} vs {:<18} FPR@95 {:6.2}  AUROC {:6.2}",
                entry.postprocessor, entry.ood_set, entry.fpr_at_95, entry.auroc
            );
        }
    }

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    report.write_files(&args.out)?;
    write_score_file(&args.out.join("scores.csv"), &score_rows)?;
    println!("report written to {}", args.out.display());
    Ok(())
}
