//! Confusion matrices, binary collapses, accuracy/precision/recall and
//! greyscale segmentation rendering.

use std::fmt::Write as _;

use thiserror::Error;

use crate::ingest::LabelMask;
use crate::pgm::GreyImage;
use crate::LabelMap;

/// Shade for pixels without a prediction.
pub const INVALID_SHADE: u8 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{actual} actual labels vs {predicted} predicted")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty confusion matrix")]
    Empty,
    #[error("invalid collapse: {0}")]
    Collapse(String),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("confusion file: {0}")]
    Format(String),
}

/// `counts[actual][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>, class_names: Vec<String>) -> Result<Self, EvalError> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) || class_names.len() != k {
            return Err(EvalError::Format(format!(
                "{k} rows, {} names; matrix must be square",
                class_names.len()
            )));
        }
        Ok(Self {
            class_names,
            counts,
        })
    }

    pub fn with_default_names(counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        let names = (0..counts.len()).map(|i| format!("class{i}")).collect();
        Self::from_counts(counts, names)
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    /// Rows of `name,count...` preceded by a header of predicted class names.
    pub fn to_csv(&self) -> String {
        let mut s = format!("actual\\predicted,{}\n", self.class_names.join(","));
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "{name},{}", cells.join(","));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| EvalError::Format("empty file".into()))?;
        let names: Vec<String> = header
            .split(',')
            .skip(1)
            .map(|s| s.trim().to_string())
            .collect();
        let mut counts = Vec::new();
        for line in lines {
            let row = line
                .split(',')
                .skip(1)
                .map(|c| c.trim().parse::<u64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EvalError::Format(format!("{line:?}: {e}")))?;
            counts.push(row);
        }
        Self::from_counts(counts, names)
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let width = self
            .class_names
            .iter()
            .map(String::len)
            .chain(self.counts.iter().flatten().map(|c| c.to_string().len()))
            .max()
            .unwrap_or(1)
            .max(6);
        let mut s = format!("{:>w$}", "", w = width + 2);
        for name in &self.class_names {
            let _ = write!(s, " {name:>width$}");
        }
        s.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            let _ = write!(s, "{name:>w$}", w = width + 2);
            for c in row {
                let _ = write!(s, " {c:>width$}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "n = {}", self.total());
        s
    }
}

pub fn confusion(actual: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix, EvalError> {
    if actual.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&a, &p) in actual.iter().zip(predicted) {
        for label in [a, p] {
            if label >= k {
                return Err(EvalError::LabelOutOfRange { label, classes: k });
            }
        }
        counts[a][p] += 1;
    }
    ConfusionMatrix::with_default_names(counts)
}

/// Classes treated as "unacceptable" (positive) when collapsing to two states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCollapseSpec {
    pub name: String,
    pub positive: Vec<usize>,
}

impl BinaryCollapseSpec {
    pub fn new(name: impl Into<String>, positive: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            positive,
        }
    }

    pub fn validate(&self, k: usize) -> Result<(), EvalError> {
        if self.positive.is_empty() {
            return Err(EvalError::Collapse("positive set is empty".into()));
        }
        if let Some(&c) = self.positive.iter().find(|&&c| c >= k) {
            return Err(EvalError::Collapse(format!("class {c} out of range")));
        }
        let mut uniq = self.positive.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() >= k {
            return Err(EvalError::Collapse("positive set must be a proper subset".into()));
        }
        Ok(())
    }

    fn is_positive(&self, c: usize) -> bool {
        self.positive.contains(&c)
    }
}

/// 2x2 matrix with index 0 = acceptable, 1 = unacceptable on both axes.
pub fn collapse(cm: &ConfusionMatrix, spec: &BinaryCollapseSpec) -> Result<ConfusionMatrix, EvalError> {
    spec.validate(cm.k())?;
    let mut counts = vec![vec![0u64; 2]; 2];
    for (a, row) in cm.counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            counts[spec.is_positive(a) as usize][spec.is_positive(p) as usize] += c;
        }
    }
    ConfusionMatrix::from_counts(
        counts,
        vec!["acceptable".to_string(), "unacceptable".to_string()],
    )
}

/// Which classes count as the positive aggregate for precision and recall.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Positive {
    Class(usize),
    Set(Vec<usize>),
}

/// `None` marks a metric whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix, positive: &Positive) -> Result<Metrics, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let set: Vec<usize> = match positive {
        Positive::Class(c) => vec![*c],
        Positive::Set(s) => s.clone(),
    };
    if let Some(&c) = set.iter().find(|&&c| c >= cm.k()) {
        return Err(EvalError::LabelOutOfRange {
            label: c,
            classes: cm.k(),
        });
    }
    let pos = |c: usize| set.contains(&c);
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for (a, row) in cm.counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            match (pos(a), pos(p)) {
                (true, true) => tp += c,
                (false, true) => fp += c,
                (true, false) => fneg += c,
                (false, false) => {}
            }
        }
    }
    Ok(Metrics {
        accuracy: cm.trace() as f64 / total as f64,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
    })
}

pub fn format_metric(m: Option<f64>) -> String {
    match m {
        Some(v) => format!("{:.1}%", 100.0 * v),
        None => "undefined".to_string(),
    }
}

/// Grey shade for class `i` of `k`: `round(255 i / (k - 1))`.
pub fn class_shade(i: usize, k: usize) -> u8 {
    ((255.0 * i as f64) / (k - 1) as f64).round() as u8
}

pub fn render_segmentation(map: &LabelMap, k: usize) -> Result<GreyImage, EvalError> {
    if k < 2 {
        return Err(EvalError::TooFewClasses(k));
    }
    let pixels = map
        .labels
        .iter()
        .map(|l| match l {
            Some(c) if (*c as usize) < k => Ok(class_shade(*c as usize, k)),
            Some(c) => Err(EvalError::LabelOutOfRange {
                label: *c as usize,
                classes: k,
            }),
            None => Ok(INVALID_SHADE),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GreyImage::new(map.width, map.height, pixels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub class_id: usize,
    pub pixel_count: usize,
    pub majority: usize,
    pub fraction_correct: f64,
    /// fraction of the region's predicted pixels per class
    pub class_fractions: Vec<f64>,
}

/// Per ground-truth class: majority predicted class and fraction correct over
/// pixels that are valid in the mask and have a prediction. Empty regions are
/// skipped with a warning.
pub fn region_report(map: &LabelMap, mask: &LabelMask) -> Result<Vec<RegionReport>, EvalError> {
    if map.width != mask.width() || map.height != mask.height() {
        return Err(EvalError::Dimension(format!(
            "map {}x{} vs mask {}x{}",
            map.width,
            map.height,
            mask.width(),
            mask.height()
        )));
    }
    let k = mask.class_count();
    let kp = map
        .labels
        .iter()
        .flatten()
        .map(|&c| c as usize + 1)
        .max()
        .unwrap_or(0)
        .max(k);
    let mut tallies = vec![vec![0usize; kp]; k];
    for row in 0..mask.height() {
        for col in 0..mask.width() {
            if let (Some(truth), Some(pred)) = (mask.label(row, col), map.get(row, col)) {
                tallies[truth as usize][pred as usize] += 1;
            }
        }
    }
    let mut out = Vec::new();
    for (class_id, t) in tallies.into_iter().enumerate() {
        let n: usize = t.iter().sum();
        if n == 0 {
            log::warn!("region for class {class_id} has no valid predicted pixels; omitted");
            continue;
        }
        let majority = (0..kp).fold(0, |best, c| if t[c] > t[best] { c } else { best });
        out.push(RegionReport {
            class_id,
            pixel_count: n,
            majority,
            fraction_correct: t[class_id] as f64 / n as f64,
            class_fractions: t.iter().map(|&c| c as f64 / n as f64).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_confusion() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let cm = confusion(&labels, &labels, 4).unwrap();
        assert_eq!(cm.trace(), 100);
        let m = metrics(&cm, &Positive::Class(1)).unwrap();
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn single_row() {
        let cm = confusion(&[1], &[0], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![0, 0], vec![1, 0]]);
    }

    #[test]
    fn confusion_errors() {
        assert!(matches!(
            confusion(&[0, 1], &[0], 2),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            confusion(&[0, 2], &[0, 1], 2),
            Err(EvalError::LabelOutOfRange { label: 2, .. })
        ));
    }

    #[test]
    fn identity_binary_metrics() {
        let cm = ConfusionMatrix::with_default_names(vec![vec![5, 0], vec![0, 5]]).unwrap();
        let m = metrics(&cm, &Positive::Class(1)).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall), (1.0, Some(1.0), Some(1.0)));
    }

    #[test]
    fn undefined_precision() {
        // never predicts positive
        let cm = ConfusionMatrix::with_default_names(vec![vec![5, 0], vec![3, 0]]).unwrap();
        let m = metrics(&cm, &Positive::Class(1)).unwrap();
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(format_metric(m.precision), "undefined");
        let empty = ConfusionMatrix::with_default_names(vec![vec![0, 0], vec![0, 0]]).unwrap();
        assert!(matches!(metrics(&empty, &Positive::Class(1)), Err(EvalError::Empty)));
    }

    #[test]
    fn collapse_validation() {
        let cm = ConfusionMatrix::with_default_names(vec![vec![1; 3]; 3]).unwrap();
        assert!(collapse(&cm, &BinaryCollapseSpec::new("x", vec![])).is_err());
        assert!(collapse(&cm, &BinaryCollapseSpec::new("x", vec![0, 1, 2])).is_err());
        assert!(collapse(&cm, &BinaryCollapseSpec::new("x", vec![3])).is_err());
        let two = collapse(&cm, &BinaryCollapseSpec::new("x", vec![1, 2])).unwrap();
        assert_eq!(two.counts, vec![vec![1, 2], vec![2, 4]]);
    }

    #[test]
    fn collapse_of_diagonal_is_diagonal() {
        let cm = ConfusionMatrix::with_default_names(vec![
            vec![3, 0, 0, 0],
            vec![0, 4, 0, 0],
            vec![0, 0, 5, 0],
            vec![0, 0, 0, 6],
        ])
        .unwrap();
        let two = collapse(&cm, &BinaryCollapseSpec::new("x", vec![1, 2, 3])).unwrap();
        assert_eq!(two.counts, vec![vec![3, 0], vec![0, 15]]);
    }

    #[test]
    fn shades() {
        let k4: Vec<u8> = (0..4).map(|i| class_shade(i, 4)).collect();
        assert_eq!(k4, vec![0, 85, 170, 255]);
        assert_eq!((class_shade(0, 2), class_shade(1, 2)), (0, 255));
        let map = LabelMap {
            width: 2,
            height: 1,
            labels: vec![Some(1), None],
        };
        let img = render_segmentation(&map, 4).unwrap();
        assert_eq!(img.pixels, vec![85, INVALID_SHADE]);
        assert!(matches!(render_segmentation(&map, 1), Err(EvalError::TooFewClasses(1))));
    }

    #[test]
    fn csv_round_trip() {
        let cm = ConfusionMatrix::with_default_names(vec![vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(ConfusionMatrix::from_csv(&cm.to_csv()).unwrap(), cm);
        assert!(cm.to_table().contains("n = 10"));
    }
}
