//! Labeled datasets built from feature images: scaling, augmentation,
//! perturbation and seeded splits.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::ingest::LabelMask;
use crate::seed;
use crate::tsr::FeatureImage;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("class {0} has no usable pixels")]
    EmptyClass(usize),
    #[error("need at least {needed} rows, have {have}")]
    TooFewRows { needed: usize, have: usize },
    #[error("split leaves the {0} partition empty")]
    EmptyPartition(&'static str),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}

/// `N x F` feature rows with class labels and the pixel each row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_features: usize,
    pub class_count: usize,
    pub vectors: Vec<f64>,
    pub labels: Vec<usize>,
    /// `(row, col)` of the source pixel
    pub provenance: Vec<(u32, u32)>,
}

impl Dataset {
    pub fn new(
        n_features: usize,
        class_count: usize,
        vectors: Vec<f64>,
        labels: Vec<usize>,
        provenance: Vec<(u32, u32)>,
    ) -> Result<Self, FeatureError> {
        let n = labels.len();
        if n_features == 0 || vectors.len() != n * n_features || provenance.len() != n {
            return Err(FeatureError::Dimension(format!(
                "{} values, {n} labels, {} provenance entries, {n_features} features",
                vectors.len(),
                provenance.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(FeatureError::Dimension(format!(
                "label {l} >= class count {class_count}"
            )));
        }
        Ok(Self {
            n_features,
            class_count,
            vectors,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_count];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut vectors = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            vectors.extend_from_slice(self.row(i));
        }
        Dataset {
            n_features: self.n_features,
            class_count: self.class_count,
            vectors,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            provenance: indices.iter().map(|&i| self.provenance[i]).collect(),
        }
    }

    /// Writes `f0..fF-1,label` CSV; provenance goes to a `row,col` sidecar.
    pub fn save(
        &self,
        csv_path: impl AsRef<Path>,
        provenance_path: impl AsRef<Path>,
    ) -> Result<(), FeatureError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        let header: Vec<String> = (0..self.n_features).map(|i| format!("f{i}")).collect();
        writeln!(w, "{},label", header.join(","))?;
        let mut line = String::new();
        for i in 0..self.len() {
            line.clear();
            for v in self.row(i) {
                let _ = write!(line, "{v},");
            }
            let _ = writeln!(line, "{}", self.labels[i]);
            w.write_all(line.as_bytes())?;
        }
        w.flush()?;
        let mut p = std::io::BufWriter::new(std::fs::File::create(provenance_path)?);
        writeln!(p, "row,col")?;
        for (r, c) in &self.provenance {
            writeln!(p, "{r},{c}")?;
        }
        p.flush()?;
        Ok(())
    }

    pub fn load(
        csv_path: impl AsRef<Path>,
        provenance_path: impl AsRef<Path>,
        class_count: usize,
    ) -> Result<Self, FeatureError> {
        let bad = |m: String| FeatureError::Format(m);
        let mut lines = BufReader::new(std::fs::File::open(csv_path)?).lines();
        let header = lines.next().ok_or_else(|| bad("empty dataset file".into()))??;
        let n_features = header.split(',').count().saturating_sub(1);
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let cells: Vec<&str> = line.trim_end().split(',').collect();
            if cells.len() != n_features + 1 {
                return Err(bad(format!("row {i}: {} cells", cells.len())));
            }
            for c in &cells[..n_features] {
                vectors.push(c.parse().map_err(|_| bad(format!("row {i}: {c:?}")))?);
            }
            labels.push(
                cells[n_features]
                    .parse()
                    .map_err(|_| bad(format!("row {i}: bad label")))?,
            );
        }
        let mut provenance = Vec::with_capacity(labels.len());
        for line in BufReader::new(std::fs::File::open(provenance_path)?)
            .lines()
            .skip(1)
        {
            let line = line?;
            let (r, c) = line
                .trim()
                .split_once(',')
                .ok_or_else(|| bad(format!("bad provenance line {line:?}")))?;
            let parse = |s: &str| s.parse::<u32>().map_err(|_| bad(format!("{s:?}")));
            provenance.push((parse(r)?, parse(c)?));
        }
        Dataset::new(n_features, class_count, vectors, labels, provenance)
    }
}

/// One row per pixel that is both valid in the mask and successfully fitted.
/// Every class with valid mask pixels must keep at least one row; a mask
/// with no valid pixels reports class 0 as empty.
pub fn assemble(features: &FeatureImage, mask: &LabelMask) -> Result<Dataset, FeatureError> {
    if features.width != mask.width() || features.height != mask.height() {
        return Err(FeatureError::Dimension(format!(
            "features {}x{} vs mask {}x{}",
            features.width,
            features.height,
            mask.width(),
            mask.height()
        )));
    }
    let present = mask.class_counts();
    if present.iter().all(|&c| c == 0) {
        return Err(FeatureError::EmptyClass(0));
    }
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    let mut provenance = Vec::new();
    for p in 0..features.pixel_count() {
        let (row, col) = (p / features.width, p % features.width);
        let (Some(label), Some(v)) = (mask.label(row, col), features.vector(p)) else {
            continue;
        };
        vectors.extend_from_slice(v);
        labels.push(label as usize);
        provenance.push((row as u32, col as u32));
    }
    let mut rows = vec![0usize; mask.class_count()];
    labels.iter().for_each(|&l| rows[l] += 1);
    if let Some(empty) = (0..rows.len()).find(|&c| present[c] > 0 && rows[c] == 0) {
        return Err(FeatureError::EmptyClass(empty));
    }
    Dataset::new(
        features.n_features,
        mask.class_count(),
        vectors,
        labels,
        provenance,
    )
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalingStats {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn is_constant(&self, feature: usize) -> bool {
        self.std[feature] == 0.0
    }

    pub fn constant_features(&self) -> Vec<usize> {
        (0..self.n_features())
            .filter(|&i| self.is_constant(i))
            .collect()
    }

    /// z-scores one vector in place; constant features map to 0.
    pub fn scale_in_place(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = if *s == 0.0 { 0.0 } else { (*v - m) / s };
        }
    }

    /// Two comma-separated rows: means, then standard deviations.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!("{}\n{}\n", join(&self.mean), join(&self.std))
    }

    pub fn from_text(text: &str) -> Result<Self, FeatureError> {
        let mut rows = text.lines().filter(|l| !l.trim().is_empty()).map(|l| {
            l.split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| FeatureError::Format(e.to_string()))
        });
        let mean = rows
            .next()
            .ok_or_else(|| FeatureError::Format("missing mean row".into()))??;
        let std = rows
            .next()
            .ok_or_else(|| FeatureError::Format("missing std row".into()))??;
        if mean.len() != std.len() || std.iter().any(|s| !(*s >= 0.0)) {
            return Err(FeatureError::Format("inconsistent scaling rows".into()));
        }
        Ok(Self { mean, std })
    }
}

pub fn fit_scaler(train: &Dataset) -> Result<ScalingStats, FeatureError> {
    let n = train.len();
    if n < 2 {
        return Err(FeatureError::TooFewRows { needed: 2, have: n });
    }
    let f = train.n_features;
    let mut mean = vec![0.0; f];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(train.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    // two-pass variance
    let mut var = vec![0.0; f];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(train.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|s| (s / n as f64).sqrt()).collect();
    Ok(ScalingStats { mean, std })
}

pub fn apply_scaler(ds: &Dataset, stats: &ScalingStats) -> Result<Dataset, FeatureError> {
    if stats.n_features() != ds.n_features {
        return Err(FeatureError::Dimension(format!(
            "scaler has {} features, dataset {}",
            stats.n_features(),
            ds.n_features
        )));
    }
    let mut out = ds.clone();
    for row in out.vectors.chunks_mut(ds.n_features) {
        stats.scale_in_place(row);
    }
    Ok(out)
}

fn check_amplitude(a: f64) -> Result<(), FeatureError> {
    if a >= 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(FeatureError::Parameter(format!("relative amplitude {a}")))
    }
}

/// `x (1 + u)`, `u ~ U[-a, a]` per element, from the stream keyed by `keys`.
fn jitter_row(src: &[f64], dst: &mut Vec<f64>, amplitude: f64, seed_value: u64, keys: &[u64]) {
    if amplitude == 0.0 {
        dst.extend_from_slice(src);
        return;
    }
    let mut rng = seed::rng(seed_value, keys);
    dst.extend(
        src.iter()
            .map(|x| x * (1.0 + rng.gen_range(-amplitude..=amplitude))),
    );
}

/// Keeps the original rows and appends `copies` jittered copies of every row.
pub fn augment(
    train: &Dataset,
    relative_amplitude: f64,
    copies: usize,
    seed_value: u64,
) -> Result<Dataset, FeatureError> {
    check_amplitude(relative_amplitude)?;
    let n = train.len();
    let mut vectors = Vec::with_capacity(train.vectors.len() * (copies + 1));
    vectors.extend_from_slice(&train.vectors);
    let mut labels = Vec::with_capacity(n * (copies + 1));
    let mut provenance = Vec::with_capacity(n * (copies + 1));
    labels.extend_from_slice(&train.labels);
    provenance.extend_from_slice(&train.provenance);
    for copy in 1..=copies {
        for i in 0..n {
            jitter_row(
                train.row(i),
                &mut vectors,
                relative_amplitude,
                seed_value,
                &[copy as u64, i as u64],
            );
        }
        labels.extend_from_slice(&train.labels);
        provenance.extend_from_slice(&train.provenance);
    }
    Dataset::new(
        train.n_features,
        train.class_count,
        vectors,
        labels,
        provenance,
    )
}

/// Replaces every row with one jittered copy.
pub fn perturb(
    ds: &Dataset,
    relative_amplitude: f64,
    seed_value: u64,
) -> Result<Dataset, FeatureError> {
    check_amplitude(relative_amplitude)?;
    let mut vectors = Vec::with_capacity(ds.vectors.len());
    for i in 0..ds.len() {
        jitter_row(
            ds.row(i),
            &mut vectors,
            relative_amplitude,
            seed_value,
            &[u64::MAX, i as u64],
        );
    }
    Ok(Dataset {
        vectors,
        ..ds.clone()
    })
}

/// Random partition into train / validation / test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction_of_train: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            train_fraction: 0.8,
            validation_fraction_of_train: 0.1,
            seed,
        }
    }

    /// `(train, validation, test)` sizes for `n` rows.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let test = ((1.0 - self.train_fraction) * n as f64).round() as usize;
        let train_raw = n - test.min(n);
        let validation = (self.validation_fraction_of_train * train_raw as f64).round() as usize;
        (train_raw - validation.min(train_raw), validation, test)
    }
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset), FeatureError> {
    let in_unit = |f: f64| f > 0.0 && f < 1.0;
    if !in_unit(spec.train_fraction) || !in_unit(spec.validation_fraction_of_train) {
        return Err(FeatureError::Parameter(format!(
            "split fractions {} / {}",
            spec.train_fraction, spec.validation_fraction_of_train
        )));
    }
    let (n_train, n_val, n_test) = spec.sizes(ds.len());
    for (n, name) in [(n_train, "train"), (n_val, "validation"), (n_test, "test")] {
        if n == 0 {
            return Err(FeatureError::EmptyPartition(name));
        }
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut seed::rng(spec.seed, &[]));
    let (test_idx, rest) = order.split_at(n_test);
    let (val_idx, train_idx) = rest.split_at(n_val);
    Ok((ds.select(train_idx), ds.select(val_idx), ds.select(test_idx)))
}
