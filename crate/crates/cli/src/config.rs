//! Pipeline configuration file (TOML).
//!
//! ```toml
//! seed = 42
//!
//! [paths]
//! sequence = "video/manifest.txt"
//! mask = "video/mask.pgm"
//! out = "run"
//!
//! [tsr]
//! degree = 4
//! packing = "concat-padded"
//! log_base = "10"
//!
//! [features]
//! trim_margin = 5
//! augment_amplitude = 0.05
//! augment_copies = 50
//!
//! [nn]
//! hidden = [10, 20]
//! activations = ["tanh", "tanh", "softmax"]
//! optimizer = "adam"
//! learning_rate = 1e-5
//! batch_size = 2048
//! epochs = 200
//! ```
//!
//! Every field has a default; relative paths resolve against the config
//! file's directory.

use std::path::{Path, PathBuf};

use aitsr_core::nn::{Activation, Budget, EarlyStopping, Optimizer, TrainConfig};
use aitsr_core::tsr::{LogBase, Packing, SaturationHandling, TsrConfig};
use aitsr_core::SplitSpec;
use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub paths: PathsSection,
    pub tsr: TsrSection,
    pub features: FeaturesSection,
    pub nn: NnSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub sequence: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsrSection {
    pub degree: usize,
    pub packing: String,
    pub log_base: String,
    /// "per-pixel" or "ignore"
    pub saturation: String,
}

impl Default for TsrSection {
    fn default() -> Self {
        Self {
            degree: 4,
            packing: Packing::ConcatPadded.as_str().into(),
            log_base: LogBase::Ten.as_str().into(),
            saturation: "per-pixel".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub trim_margin: usize,
    /// inferred from the mask when absent
    pub class_count: Option<usize>,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub scale: bool,
    pub augment_amplitude: f64,
    pub augment_copies: usize,
    pub perturb_amplitude: f64,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        Self {
            trim_margin: 5,
            class_count: None,
            train_fraction: 0.8,
            validation_fraction: 0.1,
            scale: true,
            augment_amplitude: 0.05,
            augment_copies: 50,
            perturb_amplitude: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStoppingSection {
    pub checks_apart: u64,
    pub consecutive_increases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnSection {
    /// hidden layer widths; input and output widths come from the data
    pub hidden: Vec<usize>,
    /// one per dense layer, the last being "softmax"
    pub activations: Vec<String>,
    /// "adam" or "sgd-decay"
    pub optimizer: String,
    pub learning_rate: f64,
    pub decay_step: u64,
    pub decay_rate: f64,
    pub batch_size: usize,
    /// exactly one of `epochs` / `steps`
    pub epochs: Option<u64>,
    pub steps: Option<u64>,
    pub early_stopping: Option<EarlyStoppingSection>,
    pub check_every_epochs: u64,
}

impl Default for NnSection {
    fn default() -> Self {
        Self {
            hidden: vec![10, 20],
            activations: vec!["tanh".into(), "tanh".into(), "softmax".into()],
            optimizer: "adam".into(),
            learning_rate: 1e-5,
            decay_step: 1000,
            decay_rate: 0.9,
            batch_size: 2048,
            epochs: Some(200),
            steps: None,
            early_stopping: None,
            check_every_epochs: 10,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Loads and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config = Self::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut config.paths.sequence,
            &mut config.paths.scene,
            &mut config.paths.mask,
            &mut config.paths.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    /// Checks every field that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        self.tsr_config()?;
        let f = &self.features;
        for (name, v) in [
            ("train_fraction", f.train_fraction),
            ("validation_fraction", f.validation_fraction),
        ] {
            ensure!(v > 0.0 && v < 1.0, "features.{name} must be in (0, 1), got {v}");
        }
        for (name, v) in [
            ("augment_amplitude", f.augment_amplitude),
            ("perturb_amplitude", f.perturb_amplitude),
        ] {
            ensure!(v >= 0.0 && v.is_finite(), "features.{name} must be >= 0, got {v}");
        }
        if let Some(k) = f.class_count {
            ensure!((2..=254).contains(&k), "features.class_count must be in 2..=254");
        }
        self.activations()?;
        self.train_config(0)?.validate()?;
        for (name, p) in [
            ("sequence", &self.paths.sequence),
            ("scene", &self.paths.scene),
            ("mask", &self.paths.mask),
        ] {
            if let Some(p) = p {
                ensure!(p.exists(), "paths.{name}: {} does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn tsr_config(&self) -> Result<TsrConfig> {
        let t = &self.tsr;
        ensure!(t.degree >= 2, "tsr.degree must be >= 2 (derivatives), got {}", t.degree);
        let packing = Packing::parse(&t.packing)
            .with_context(|| format!("tsr.packing: unknown {:?}", t.packing))?;
        let log_base = LogBase::parse(&t.log_base)
            .with_context(|| format!("tsr.log_base: unknown {:?}", t.log_base))?;
        let saturation = match t.saturation.as_str() {
            "per-pixel" => SaturationHandling::PerPixel,
            "ignore" => SaturationHandling::Ignore,
            other => bail!("tsr.saturation: unknown {other:?}"),
        };
        Ok(TsrConfig {
            degree: t.degree,
            packing,
            log_base,
            saturation,
        })
    }

    pub fn split_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            train_fraction: self.features.train_fraction,
            validation_fraction_of_train: self.features.validation_fraction,
            seed,
        }
    }

    pub fn activations(&self) -> Result<Vec<Activation>> {
        let nn = &self.nn;
        ensure!(
            nn.activations.len() == nn.hidden.len() + 1,
            "nn.activations needs {} entries (hidden layers + output), got {}",
            nn.hidden.len() + 1,
            nn.activations.len()
        );
        nn.activations
            .iter()
            .map(|a| Activation::parse(a).with_context(|| format!("nn.activations: unknown {a:?}")))
            .collect()
    }

    /// Full layer sizes for the given data shape.
    pub fn layer_sizes(&self, n_features: usize, n_classes: usize) -> Vec<usize> {
        let mut sizes = vec![n_features];
        sizes.extend(&self.nn.hidden);
        sizes.push(n_classes);
        sizes
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let nn = &self.nn;
        let optimizer = match nn.optimizer.as_str() {
            "adam" => Optimizer::Adam,
            "sgd-decay" => Optimizer::SgdDecay,
            other => bail!("nn.optimizer: unknown {other:?}"),
        };
        let budget = match (nn.epochs, nn.steps) {
            (Some(e), None) => Budget::Epochs(e),
            (None, Some(s)) => Budget::Steps(s),
            _ => bail!("nn: give exactly one of epochs / steps"),
        };
        Ok(TrainConfig {
            optimizer,
            learning_rate: nn.learning_rate,
            decay_step: nn.decay_step,
            decay_rate: nn.decay_rate,
            batch_size: nn.batch_size,
            budget,
            early_stopping: nn.early_stopping.map(|es| EarlyStopping {
                checks_apart: es.checks_apart,
                consecutive_increases: es.consecutive_increases,
            }),
            check_every_epochs: nn.check_every_epochs,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
        assert_eq!(PipelineConfig::default().tsr_config().unwrap(), TsrConfig::default());
    }

    #[test]
    fn sections_parse() {
        let c = PipelineConfig::parse(
            "seed = 3\n[tsr]\ndegree = 8\npacking = \"concat-truncated\"\n[nn]\nhidden = [16, 32, 16]\nactivations = [\"relu\", \"relu\", \"relu\", \"softmax\"]\noptimizer = \"sgd-decay\"\nlearning_rate = 0.01\nepochs = 0\nsteps = 100\n",
        )
        .unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.layer_sizes(24, 2), vec![24, 16, 32, 16, 2]);
        assert!(c.validate().is_err(), "epochs and steps both given");
    }

    #[test]
    fn bad_values_rejected() {
        assert!(PipelineConfig::parse("[tsr]\nwhatever = 1\n").is_err());
        let mut c = PipelineConfig::default();
        c.tsr.degree = 1;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.nn.activations.pop();
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.paths.mask = Some("/definitely/not/here.pgm".into());
        assert!(c.validate().is_err());
    }
}
