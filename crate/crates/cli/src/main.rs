use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aitsr_cli::commands::{self, EvalInput, DEFAULT_SEED};
use aitsr_cli::error::{CliError, CliResult, ValidationExt};
use aitsr_cli::repro::{self, Experiment, ReproOptions, REPRO_SEED};
use aitsr_cli::PipelineConfig;
use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};

/// Thermographic delamination pipeline.
#[derive(Debug, Parser)]
#[command(name = "aitsr", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// pipeline config (TOML); every field has a default
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// base seed for every random stream
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// caps the worker threads used for fitting and training
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a scene file into a frame sequence and label mask.
    Synth {
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Fit TSR features for every pixel of a sequence.
    Fit {
        /// sequence manifest
        #[arg(long)]
        sequence: Option<PathBuf>,
    },
    /// Train a classifier on a feature image and label mask.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Confusion matrix, metrics and binary collapses.
    Eval {
        /// stored confusion matrix CSV
        #[arg(long, conflicts_with_all = ["features", "dataset"])]
        confusion: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// feature image to segment and score against --mask
        #[arg(long, requires = "model")]
        features: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// dataset CSV (with its _provenance sidecar) to classify
        #[arg(long, requires = "model", conflicts_with = "features")]
        dataset: Option<PathBuf>,
        /// `name:i,j,...` classes counted as unacceptable; repeatable
        #[arg(long)]
        collapse: Vec<String>,
    },
    /// Segment a feature image into a PGM class map.
    Segment {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Run a whole experiment and write a report and results.json.
    Repro {
        /// synthetic-2class or surrogate-4class
        experiment: String,
        /// small images and short training
        #[arg(long)]
        quick: bool,
    },
}

fn load_config(global: &Global) -> CliResult<PipelineConfig> {
    let config = match &global.config {
        Some(p) => {
            commands::require_file(p, "config")?;
            PipelineConfig::load(p).invalid()?
        }
        None => PipelineConfig::default(),
    };
    config.validate().invalid()?;
    Ok(config)
}

fn pick(flag: &Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| CliError::Validation(anyhow!("no {what} given (flag or config)")))
}

fn run(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    if let Some(n) = g.workers {
        if n == 0 {
            return Err(anyhow!("--workers must be >= 1")).invalid();
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .invalid()?;
    }
    let config = load_config(g)?;
    let seed = g.seed.or(config.seed).unwrap_or(DEFAULT_SEED);
    let out = g
        .out
        .clone()
        .or_else(|| config.paths.out.clone())
        .unwrap_or_else(|| PathBuf::from("aitsr-out"));

    match &cli.command {
        Command::Synth { scene } => {
            let scene = pick(scene, &config.paths.scene, "scene file")?;
            let written = commands::synth(&scene, &out, g.seed)?;
            println!("{}\n{}", written.manifest.display(), written.mask.display());
        }
        Command::Fit { sequence } => {
            let sequence = pick(sequence, &config.paths.sequence, "sequence manifest")?;
            let tsr = config.tsr_config().invalid()?;
            let target = out.join("features.tsr");
            let f = commands::fit(&sequence, &tsr, &target)?;
            println!("{} ({} of {} pixels fitted)", target.display(), f.valid_count(), f.pixel_count());
        }
        Command::Train { features, mask } => {
            let mask = pick(mask, &config.paths.mask, "mask")?;
            let run = commands::train_cmd(features, &mask, &config, seed, &out)?;
            println!(
                "validation accuracy {:.4}, test accuracy {:.4}, perturbed test accuracy {:.4}",
                run.validation_accuracy, run.test_accuracy, run.perturbed_test_accuracy
            );
            println!("model written to {}", out.join("model.txt").display());
        }
        Command::Eval {
            confusion,
            model,
            features,
            mask,
            dataset,
            collapse,
        } => {
            let input = match (confusion, model, features, dataset) {
                (Some(c), _, _, _) => EvalInput::Confusion(c.clone()),
                (None, Some(m), Some(f), None) => EvalInput::Segmentation {
                    model: m.clone(),
                    features: f.clone(),
                    mask: pick(mask, &config.paths.mask, "mask")?,
                },
                (None, Some(m), None, Some(d)) => EvalInput::Dataset {
                    model: m.clone(),
                    dataset: d.clone(),
                },
                _ => {
                    return Err(anyhow!(
                        "give --confusion, or --model with --features (and --mask), or --model with --dataset"
                    ))
                    .invalid()
                }
            };
            let collapses = if collapse.is_empty() {
                None
            } else {
                Some(
                    collapse
                        .iter()
                        .map(|c| commands::parse_collapse(c))
                        .collect::<anyhow::Result<Vec<_>>>()
                        .invalid()?,
                )
            };
            let out_dir = g.out.as_deref().or(config.paths.out.as_deref());
            let result = commands::eval_cmd(&input, collapses, config.features.trim_margin, out_dir)?;
            print!("{}", result.to_text());
        }
        Command::Segment { model, features } => {
            let target = out.join("segmentation.pgm");
            let map = commands::segment_cmd(model, features, &target)?;
            let labelled = map.labels.iter().filter(|l| l.is_some()).count();
            println!("{} ({labelled} labelled pixels)", target.display());
        }
        Command::Repro { experiment, quick } => {
            let experiment = Experiment::parse(experiment)
                .ok_or_else(|| anyhow!("unknown experiment {experiment:?}; expected synthetic-2class or surrogate-4class"))
                .invalid()?;
            let opts = ReproOptions {
                experiment,
                quick: *quick,
                seed: g.seed.or(config.seed).unwrap_or(REPRO_SEED),
                out: out.clone(),
            };
            repro::repro(&opts)?;
            print!("{}", read_report(&out.join("report.txt")));
        }
    }
    Ok(())
}

fn read_report(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_default()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
