use std::path::Path;

use rand::rngs::StdRng;
use rand::SeedableRng;

use oodkit::checkpoint::{checkpoint_from, load_checkpoint, restore_model, save_checkpoint, CheckpointMeta};
use oodkit::config::RunConfig;
use oodkit::data::{load_image_folder, load_split, read_benchmark, Dataset, Split, TransformSpec};
use oodkit::error::{Error, Result};
use oodkit::model::Classifier;
use oodkit::train::{batches_per_epoch, evaluate_accuracy, train_joint, training_log_csv, AlphaGranularity};
use oodkit::PipelineFloat;

/// Loads the training (and optional validation) datasets a config names.
pub fn load_train_data(cfg: &RunConfig) -> Result<(Dataset<PipelineFloat>, Option<Dataset<PipelineFloat>>)> {
    let transform = TransformSpec {
        resize: cfg.data.resize,
        random_horizontal_flip: cfg.data.random_horizontal_flip,
        random_resized_crop: cfg.data.random_resized_crop,
    };
    match (&cfg.data.benchmark, &cfg.data.train_folder) {
        (Some(dir), None) => {
            let (manifest, images) = read_benchmark(dir)?;
            let mut train: Dataset<PipelineFloat> = load_split(&manifest, &images, Split::Train)?;
            train.transform = TransformSpec {
                resize: None,
                ..transform
            };
            let val = load_split(&manifest, &images, Split::ValId).ok();
            Ok((train, val))
        }
        (None, Some(dir)) => {
            let mut train: Dataset<PipelineFloat> = load_image_folder(dir, &transform)?;
            train.transform = transform;
            let val = match &cfg.data.val_folder {
                Some(vdir) => Some(load_image_folder(
                    vdir,
                    &TransformSpec {
                        random_horizontal_flip: false,
                        random_resized_crop: None,
                        ..transform
                    },
                )?),
                None => None,
            };
            Ok((train, val))
        }
        (Some(_), Some(_)) => Err(Error::ConfigParse(
            "set either data.benchmark or data.train_folder, not both".into(),
        )),
        (None, None) => Err(Error::ConfigParse(
            "config needs data.benchmark or data.train_folder".into(),
        )),
    }
}

pub fn run(config_path: &Path, seed_override: Option<u64>, out: &Path, resume: Option<&Path>) -> Result<()> {
    let mut cfg = RunConfig::from_path(config_path)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    let (train, val) = load_train_data(&cfg)?;
    if train.num_classes() != 0 && train.num_classes() != cfg.classifier.num_classes {
        return Err(Error::ConfigParse(format!(
            "dataset has {} classes but config says {}",
            train.num_classes(),
            cfg.classifier.num_classes
        )));
    }

    let (mut model, start_epoch) = match resume {
        Some(ckpt_path) => {
            let ckpt = load_checkpoint(ckpt_path)?;
            let model: Classifier<PipelineFloat> = restore_model(&ckpt)?;
            println!(
                "resuming from {} at epoch {}",
                ckpt_path.display(),
                ckpt.meta.epochs_trained
            );
            (model, ckpt.meta.epochs_trained)
        }
        None => {
            let mut rng = StdRng::seed_from_u64(cfg.seed);
            (Classifier::new(cfg.classifier.clone(), &mut rng)?, 0)
        }
    };

    let total_epochs = start_epoch + cfg.optimizer.epochs;
    let schedule_steps = match cfg.synthesis.alpha_granularity {
        AlphaGranularity::Epoch => total_epochs,
        AlphaGranularity::Step => {
            total_epochs * batches_per_epoch(train.len(), cfg.optimizer.batch_size)
        }
    };
    let synth = cfg.synthesis.runtime(schedule_steps)?;

    let log = train_joint(
        &mut model,
        &train,
        &synth,
        cfg.lambda,
        cfg.synthesis.alpha_granularity,
        &cfg.optimizer,
        cfg.seed,
        start_epoch,
    )?;
    for row in &log {
        println!(
            "epoch {:>3}  ce {:.4}  kl {:.4}  train-acc {:.3}  alpha {:.2}",
            row.epoch, row.ce, row.kl, row.accuracy, row.alpha
        );
    }
    if let Some(val) = &val {
        let acc = evaluate_accuracy(&model, val)?;
        println!("validation accuracy: {acc:.4}");
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join("train_log.csv");
    std::fs::write(&log_path, training_log_csv(&log)).map_err(|e| Error::io(&log_path, e))?;
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
    let ckpt = checkpoint_from(
        &model,
        cfg.synthesis.clone(),
        CheckpointMeta {
            seed: cfg.seed,
            epochs_trained: total_epochs,
            lambda: cfg.lambda,
            config_digest: cfg.digest(),
        },
    );
    let ckpt_path = out.join("checkpoint.json");
    save_checkpoint(&ckpt_path, &ckpt)?;
    println!("checkpoint written to {}", ckpt_path.display());
    Ok(())
}
