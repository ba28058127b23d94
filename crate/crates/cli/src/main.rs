//! `oodkit` command line: benchmark generation, training, outlier previews,
//! evaluation, and score histograms.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure during training, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod postspec;
mod render;

/// Environment variable naming the root for relative output paths.
pub const OUTPUT_ROOT_ENV: &str = "OODKIT_OUTPUT_ROOT";

#[derive(Parser)]
#[command(
    name = "oodkit",
    about = "Out-of-distribution detection toolkit: synthesize virtual outliers, train, and evaluate",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic spurious-correlation benchmark.
    GenBenchmark {
        /// TOML benchmark spec; omitted = the built-in desk-scale spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for meta.toml, manifest.csv, arrays.bin.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier from a declarative run config.
    Train {
        /// Run config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (checkpoint.json, train_log.csv, config.toml).
        #[arg(long)]
        out: PathBuf,
        /// Resume from an existing checkpoint; epoch numbering continues.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score ID and OOD sets with one or more postprocessors.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Benchmark directory: uses test_id vs every OOD split.
        #[arg(long)]
        benchmark: Option<PathBuf>,
        /// Image folder of in-distribution test data.
        #[arg(long)]
        id: Option<PathBuf>,
        /// OOD set as name=dir; repeatable.
        #[arg(long = "ood")]
        ood: Vec<String>,
        /// Postprocessor, e.g. `msp`, `energy`, `energy:T=2`,
        /// `tempscale:T=1000`, `odin:T=1000,eps=0.0014`,
        /// `iodin-topk:T=1000,eps=0.0014,p=10`,
        /// `iodin-channel:T=1000,eps=0.0014`; repeatable.
        #[arg(long = "post")]
        post: Vec<String>,
        /// Tune ODIN's (T, eps) on a validation OOD set before scoring and
        /// add the tuned scorer to the report.
        #[arg(long)]
        tune_odin: Option<PathBuf>,
        /// Resize folder images to H,W (benchmark input ignores this).
        #[arg(long, value_parser = parse_size)]
        resize: Option<(usize, usize)>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render (input, masked saliency, outlier) triplets as an image grid.
    PreviewOutliers {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Benchmark directory to draw preview inputs from (train split).
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long, default_value_t = 6)]
        n: usize,
        /// Output PNG path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Overlaid ID vs OOD score histograms per postprocessor (SVG).
    ScoreHist {
        /// Score file written by `eval` (scores.csv).
        #[arg(long)]
        scores: PathBuf,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        bins: usize,
    },
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected H,W".into());
    }
    let h = parts[0].trim().parse().map_err(|_| "bad height")?;
    let w = parts[1].trim().parse().map_err(|_| "bad width")?;
    Ok((h, w))
}

/// Resolves an output path against `OODKIT_OUTPUT_ROOT` when relative.
pub fn resolve_out(path: &std::path::Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenBenchmark { spec, seed, out } => {
            commands::gen_benchmark::run(spec.as_deref(), seed, &resolve_out(&out))
        }
        Command::Train {
            config,
            seed,
            out,
            resume,
        } => commands::train::run(&config, seed, &resolve_out(&out), resume.as_deref()),
        Command::Eval {
            checkpoint,
            benchmark,
            id,
            ood,
            post,
            tune_odin,
            resize,
            out,
            seed,
        } => commands::eval::run(commands::eval::EvalArgs {
            checkpoint,
            benchmark,
            id,
            ood,
            post,
            tune_odin,
            resize,
            out: resolve_out(&out),
            seed,
        }),
        Command::PreviewOutliers {
            checkpoint,
            benchmark,
            n,
            out,
            seed,
        } => commands::preview::run(&checkpoint, &benchmark, n, &resolve_out(&out), seed),
        Command::ScoreHist { scores, out, bins } => {
            commands::hist::run(&scores, &resolve_out(&out), bins)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
