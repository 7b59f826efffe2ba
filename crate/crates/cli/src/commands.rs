//! The pipeline subcommands as library calls. Each writes only into its
//! output location and derives every random stream from one seed, so a
//! rerun with the same inputs reproduces its files byte for byte.

use std::path::{Path, PathBuf};

use aitsr_core::eval::{confusion, region_report, render_segmentation, BinaryCollapseSpec, ConfusionMatrix, RegionReport};
use aitsr_core::features::{apply_scaler, assemble, augment, fit_scaler, perturb, split, Dataset};
use aitsr_core::ingest::{load_sequence, trim_mask, write_sequence, LabelMask, INVALID_LABEL};
use aitsr_core::nn::{load_model, predict_map, save_model, train, MlpModel, TrainTrace};
use aitsr_core::pgm::GreyImage;
use aitsr_core::seed;
use aitsr_core::synthgen::SceneFile;
use aitsr_core::tsr::{fit_sequence, FeatureImage, TsrConfig};
use aitsr_core::LabelMap;
use anyhow::{anyhow, Context as _};

use crate::config::PipelineConfig;
use crate::error::{CliResult, StageExt, ValidationExt};
use crate::report::{default_collapses, EvalReport};

/// Seed used when neither `--seed` nor the config gives one.
pub const DEFAULT_SEED: u64 = 20_240_601;

/// Stream keys for the stages that draw random numbers.
mod streams {
    pub const SPLIT: u64 = 1;
    pub const AUGMENT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const PERTURB: u64 = 5;
}

pub fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(anyhow!("{what} {} does not exist", path.display())).invalid()
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .stage("output")
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .stage("output")
}

fn same_shape(what: &str, (w, h): (usize, usize), (mw, mh): (usize, usize)) -> CliResult<()> {
    if (w, h) == (mw, mh) {
        Ok(())
    } else {
        Err(anyhow!("{what} {w}x{h} vs mask {mw}x{mh}")).invalid()
    }
}

/// Output of [`synth`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub mask: PathBuf,
}

/// Renders a scene file into `out_dir/manifest.txt`, frame CSVs and
/// `out_dir/mask.pgm`. `noise_seed` replaces the scene's noise seed.
pub fn synth(scene_path: &Path, out_dir: &Path, noise_seed: Option<u64>) -> CliResult<SynthOutput> {
    require_file(scene_path, "scene file")?;
    let mut scene_file = SceneFile::load(scene_path).invalid()?;
    if let Some(s) = noise_seed {
        scene_file.noise.seed = s;
    }
    let scene = scene_file.build().invalid()?;
    let seq = scene.render().stage("synthgen")?;
    let manifest = write_sequence(&seq, out_dir, "counts").stage("output")?;
    let mask = out_dir.join("mask.pgm");
    scene.mask.save(&mask).stage("output")?;
    log::info!(
        "rendered {}x{}x{} into {}",
        seq.width(),
        seq.height(),
        seq.frame_count(),
        out_dir.display()
    );
    Ok(SynthOutput { manifest, mask })
}

/// Fits every pixel of a sequence and writes the feature image.
pub fn fit(manifest: &Path, tsr: &TsrConfig, out_file: &Path) -> CliResult<FeatureImage> {
    require_file(manifest, "sequence manifest")?;
    let seq = load_sequence(manifest).invalid()?;
    let features = fit_sequence(&seq, tsr);
    log::info!(
        "fitted {} of {} pixels",
        features.valid_count(),
        features.pixel_count()
    );
    if let Some(parent) = out_file.parent() {
        create_dir(parent)?;
    }
    features.save(out_file).stage("output")?;
    Ok(features)
}

/// Class count of a mask PGM: one more than its largest valid label.
pub fn infer_class_count(mask_path: &Path) -> CliResult<usize> {
    let img = GreyImage::load(mask_path).invalid()?;
    let max = img.pixels.iter().copied().filter(|&p| p != INVALID_LABEL).max();
    match max {
        Some(m) => Ok((m as usize + 1).max(2)),
        None => Err(anyhow!("mask {} has no labelled pixels", mask_path.display())).invalid(),
    }
}

pub fn load_mask(mask_path: &Path, class_count: Option<usize>) -> CliResult<LabelMask> {
    require_file(mask_path, "mask")?;
    let k = match class_count {
        Some(k) => k,
        None => infer_class_count(mask_path)?,
    };
    LabelMask::load(mask_path, k).invalid()
}

/// A trained model together with its held-out measurements.
#[derive(Debug, Clone)]
pub struct TrainRun {
    /// carries the scaling statistics when scaling is enabled
    pub model: MlpModel,
    pub trace: TrainTrace,
    /// unscaled held-out rows
    pub validation: Dataset,
    pub test: Dataset,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
    pub perturbed_validation_accuracy: f64,
    pub perturbed_test_accuracy: f64,
    pub test_confusion: ConfusionMatrix,
    pub validation_confusion: ConfusionMatrix,
    pub perturbed_test_confusion: ConfusionMatrix,
}

fn accuracy_and_confusion(model: &MlpModel, ds: &Dataset) -> anyhow::Result<(f64, ConfusionMatrix)> {
    let predicted = model.predict_classes(ds)?;
    let cm = confusion(&ds.labels, &predicted, ds.class_count)?;
    Ok((cm.trace() as f64 / cm.total().max(1) as f64, cm))
}

/// Split, scale, augment, train and score one dataset.
pub fn train_dataset(ds: &Dataset, config: &PipelineConfig, seed_value: u64) -> CliResult<TrainRun> {
    let f = &config.features;
    let (tr, va, te) = split(ds, &config.split_spec(seed::derive(seed_value, &[streams::SPLIT]))).stage("split")?;
    let stats = if f.scale {
        Some(fit_scaler(&tr).stage("scaling")?)
    } else {
        None
    };
    let tr_aug = augment(
        &tr,
        f.augment_amplitude,
        f.augment_copies,
        seed::derive(seed_value, &[streams::AUGMENT]),
    )
    .stage("augmentation")?;
    let scaled = |d: &Dataset| -> CliResult<Dataset> {
        match &stats {
            Some(s) => apply_scaler(d, s).stage("scaling"),
            None => Ok(d.clone()),
        }
    };
    let (tr_s, va_s) = (scaled(&tr_aug)?, scaled(&va)?);
    drop(tr_aug);

    let activations = config.activations().invalid()?;
    let sizes = config.layer_sizes(ds.n_features, ds.class_count);
    let init = MlpModel::init(&sizes, &activations, seed::derive(seed_value, &[streams::INIT])).invalid()?;
    let train_config = config
        .train_config(seed::derive(seed_value, &[streams::TRAIN]))
        .invalid()?;
    log::info!(
        "training {:?} on {} rows ({} validation, {} test)",
        sizes,
        tr_s.len(),
        va.len(),
        te.len()
    );
    let (mut model, trace) = train(&init, &tr_s, &va_s, &train_config).stage("training")?;
    drop(tr_s);
    model.scaling = stats.clone();

    // held-out rows stay raw so perturbation acts on unscaled features
    let perturb_seed = seed::derive(seed_value, &[streams::PERTURB]);
    let bare = MlpModel {
        scaling: None,
        ..model.clone()
    };
    let score = |d: &Dataset| -> CliResult<(f64, ConfusionMatrix)> {
        accuracy_and_confusion(&bare, &scaled(d)?).stage("evaluation")
    };
    let (validation_accuracy, validation_confusion) = score(&va)?;
    let (test_accuracy, test_confusion) = score(&te)?;
    let pva = perturb(&va, f.perturb_amplitude, perturb_seed).stage("perturbation")?;
    let pte = perturb(&te, f.perturb_amplitude, seed::derive(perturb_seed, &[1])).stage("perturbation")?;
    let (perturbed_validation_accuracy, _) = score(&pva)?;
    let (perturbed_test_accuracy, perturbed_test_confusion) = score(&pte)?;
    Ok(TrainRun {
        model,
        trace,
        validation: va,
        test: te,
        validation_accuracy,
        test_accuracy,
        perturbed_validation_accuracy,
        perturbed_test_accuracy,
        test_confusion,
        validation_confusion,
        perturbed_test_confusion,
    })
}

impl TrainRun {
    /// `model.txt`, `trace.csv`, `scaling.txt`, `test.csv` with its
    /// provenance sidecar, and `train_summary.json`.
    pub fn write(&self, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
        create_dir(out_dir)?;
        let model = out_dir.join("model.txt");
        save_model(&self.model, &model).stage("output")?;
        let trace = out_dir.join("trace.csv");
        write_text(&trace, &self.trace.to_csv())?;
        let mut written = vec![model, trace];
        if let Some(s) = &self.model.scaling {
            let p = out_dir.join("scaling.txt");
            write_text(&p, &s.to_text())?;
            written.push(p);
        }
        let test = out_dir.join("test.csv");
        let test_prov = provenance_path(&test);
        self.test.save(&test, &test_prov).stage("output")?;
        written.extend([test, test_prov]);
        let summary = out_dir.join("train_summary.json");
        let json = serde_json::json!({
            "validation_accuracy": self.validation_accuracy,
            "test_accuracy": self.test_accuracy,
            "perturbed_validation_accuracy": self.perturbed_validation_accuracy,
            "perturbed_test_accuracy": self.perturbed_test_accuracy,
            "checks": self.trace.entries.len(),
            "final_step": self.trace.entries.last().map(|e| e.step),
            "early_stopped": matches!(self.trace.stop_reason, aitsr_core::nn::StopReason::EarlyStopped { .. }),
        });
        write_text(&summary, &format!("{json:#}\n"))?;
        written.push(summary);
        Ok(written)
    }
}

/// `<stem>_provenance.csv` next to a dataset CSV.
pub fn provenance_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    csv.with_file_name(format!("{stem}_provenance.csv"))
}

/// Trains on a feature image and its (trimmed) mask and writes the outputs.
pub fn train_cmd(features_path: &Path, mask_path: &Path, config: &PipelineConfig, seed_value: u64, out_dir: &Path) -> CliResult<TrainRun> {
    require_file(features_path, "feature file")?;
    let features = FeatureImage::load(features_path).invalid()?;
    let mask = load_mask(mask_path, config.features.class_count)?;
    same_shape("features", (features.width, features.height), (mask.width(), mask.height()))?;
    let mask = trim_mask(&mask, config.features.trim_margin);
    let ds = assemble(&features, &mask).stage("assembly")?;
    log::info!("{} rows, per class {:?}", ds.len(), ds.class_counts());
    let run = train_dataset(&ds, config, seed_value)?;
    run.write(out_dir)?;
    Ok(run)
}

/// Confusion of a segmentation against a mask over pixels valid in both.
pub fn map_confusion(map: &LabelMap, mask: &LabelMask, k: usize) -> CliResult<ConfusionMatrix> {
    same_shape("map", (map.width, map.height), (mask.width(), mask.height()))?;
    let (mut actual, mut predicted) = (Vec::new(), Vec::new());
    for row in 0..mask.height() {
        for col in 0..mask.width() {
            if let (Some(t), Some(p)) = (mask.label(row, col), map.get(row, col)) {
                actual.push(t as usize);
                predicted.push(p as usize);
            }
        }
    }
    confusion(&actual, &predicted, k).stage("evaluation")
}

/// Where [`eval_cmd`] takes its confusion matrix from.
#[derive(Debug, Clone)]
pub enum EvalInput {
    /// a stored matrix CSV
    Confusion(PathBuf),
    /// segment a feature image and score it against a mask
    Segmentation { model: PathBuf, features: PathBuf, mask: PathBuf },
    /// classify a dataset CSV (with its provenance sidecar)
    Dataset { model: PathBuf, dataset: PathBuf },
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub regions: Vec<RegionReport>,
}

impl EvalOutput {
    pub fn to_text(&self) -> String {
        let mut s = self.report.to_text();
        if !self.regions.is_empty() {
            s.push_str("\nregions (ground-truth class: majority prediction, fraction correct)\n");
            for r in &self.regions {
                s.push_str(&format!(
                    "  class {}: majority {}, {:.1}% of {} pixels\n",
                    r.class_id,
                    r.majority,
                    100.0 * r.fraction_correct,
                    r.pixel_count
                ));
            }
        }
        s
    }
}

/// Builds the confusion matrix, collapses it and writes `confusion.csv`,
/// `report.txt` and `report.json` under `out_dir` when given.
pub fn eval_cmd(
    input: &EvalInput,
    collapses: Option<Vec<BinaryCollapseSpec>>,
    trim_margin: usize,
    out_dir: Option<&Path>,
) -> CliResult<EvalOutput> {
    let mut regions = Vec::new();
    let matrix = match input {
        EvalInput::Confusion(path) => {
            require_file(path, "confusion matrix")?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .invalid()?;
            ConfusionMatrix::from_csv(&text).invalid()?
        }
        EvalInput::Segmentation { model, features, mask } => {
            require_file(model, "model")?;
            require_file(features, "feature file")?;
            let model = load_model(model).invalid()?;
            let features = FeatureImage::load(features).invalid()?;
            let mask = trim_mask(&load_mask(mask, Some(model.n_classes()))?, trim_margin);
            let map = predict_map(&model, &features).stage("segmentation")?;
            regions = region_report(&map, &mask).stage("evaluation")?;
            map_confusion(&map, &mask, model.n_classes())?
        }
        EvalInput::Dataset { model, dataset } => {
            require_file(model, "model")?;
            require_file(dataset, "dataset")?;
            let model = load_model(model).invalid()?;
            let ds = Dataset::load(dataset, provenance_path(dataset), model.n_classes()).invalid()?;
            let scaled = match &model.scaling {
                Some(s) => apply_scaler(&ds, s).invalid()?,
                None => ds,
            };
            let bare = MlpModel { scaling: None, ..model };
            accuracy_and_confusion(&bare, &scaled).stage("evaluation")?.1
        }
    };
    let collapses = collapses.unwrap_or_else(|| default_collapses(matrix.k()));
    for c in &collapses {
        c.validate(matrix.k()).invalid()?;
    }
    let report = EvalReport::new(matrix, &collapses).stage("evaluation")?;
    let out = EvalOutput { report, regions };
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        write_text(&dir.join("confusion.csv"), &out.report.matrix.to_csv())?;
        write_text(&dir.join("report.txt"), &out.to_text())?;
        write_text(&dir.join("report.json"), &format!("{:#}\n", out.report.to_json()))?;
    }
    Ok(out)
}

/// Segments a feature image and writes the map as a PGM.
pub fn segment_cmd(model_path: &Path, features_path: &Path, out_file: &Path) -> CliResult<LabelMap> {
    require_file(model_path, "model")?;
    require_file(features_path, "feature file")?;
    let model = load_model(model_path).invalid()?;
    let features = FeatureImage::load(features_path).invalid()?;
    let map = predict_map(&model, &features).stage("segmentation")?;
    let img = render_segmentation(&map, model.n_classes()).stage("segmentation")?;
    if let Some(parent) = out_file.parent() {
        create_dir(parent)?;
    }
    img.save(out_file).stage("output")?;
    Ok(map)
}

/// Parses `name:1,2,3`.
pub fn parse_collapse(s: &str) -> anyhow::Result<BinaryCollapseSpec> {
    let (name, list) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("collapse {s:?}: expected name:i,j,..."))?;
    let positive = list
        .split(',')
        .map(|p| p.trim().parse::<usize>().with_context(|| format!("collapse {s:?}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(BinaryCollapseSpec::new(name.trim(), positive))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapse_syntax() {
        let c = parse_collapse("thick:2,3").unwrap();
        assert_eq!((c.name.as_str(), c.positive.clone()), ("thick", vec![2, 3]));
        assert!(parse_collapse("nolist").is_err());
        assert!(parse_collapse("x:1,a").is_err());
    }

    #[test]
    fn provenance_sidecar_name() {
        assert_eq!(provenance_path(Path::new("/a/test.csv")), PathBuf::from("/a/test_provenance.csv"));
    }
}
