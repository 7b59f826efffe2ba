//! Delamination screening from flash-thermography pixel histories.
//!
//! The pipeline stages are:
//!
//! 1. **Ingest** – frame sequences from CSV-per-frame exports, label masks from PGM.
//! 2. **Synthgen** – physics-based synthetic cooling videos for verification without hardware.
//! 3. **TSR** – per-pixel log-log polynomial fits, analytic log-time derivatives, feature packing.
//! 4. **Features** – labeled datasets, z-score scaling, augmentation, seeded splits.
//! 5. **NN** – a small dense classifier trained with backpropagation (SGD with decay or Adam).
//! 6. **Eval** – confusion matrices, binary collapses, metrics, greyscale segmentation maps.

pub mod eval;
pub mod features;
pub mod ingest;
pub mod nn;
pub mod pgm;
pub mod seed;
pub mod synthgen;
pub mod tsr;

pub use eval::{BinaryCollapseSpec, ConfusionMatrix, Metrics};
pub use features::{Dataset, ScalingStats, SplitSpec};
pub use ingest::{FrameSequence, LabelMask, Rect};
pub use nn::{Activation, MlpModel, TrainConfig, TrainTrace};
pub use synthgen::{NoiseSpec, RegionLayout, TemperatureProfile};
pub use tsr::{FeatureImage, Packing, TsrFeatureVector, TsrFit};

/// Per-pixel predicted classes; `None` marks pixels that carry no prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Option<u8>>,
}

impl LabelMap {
    pub fn get(&self, row: usize, col: usize) -> Option<u8> {
        self.labels[row * self.width + col]
    }
}
