//! Frame sequences and label masks: loading, validation, cropping, trimming.
//!
//! On disk a sequence is a manifest plus one CSV file per frame. The manifest
//! is flat `key = value` text:
//!
//! ```text
//! width = 236
//! height = 182
//! saturation = 254
//! units = counts
//! timestamps = 0.0667, 0.1333, 0.2
//! frame = frame_00000.csv
//! frame = frame_00001.csv
//! frame = frame_00002.csv
//! ```
//!
//! `timestamps` may be replaced by `fps`, in which case frame `k` is taken at
//! `(k + 1) / fps` seconds. Frame paths are relative to the manifest. Masks are
//! binary PGM files where the grey value is the class id and 255 marks an
//! ignored pixel.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::pgm::{GreyImage, PgmError};

/// Grey value reserved for ignored pixels in mask files.
pub const INVALID_LABEL: u8 = 255;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: frame is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    DimensionMismatch {
        path: PathBuf,
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("timestamps must be positive and strictly increasing (index {index})")]
    Timestamps { index: usize },
    #[error("{path}:{line}: non-numeric cell {cell:?}")]
    Parse {
        path: PathBuf,
        line: usize,
        cell: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("rect {0:?} is outside the {1}x{2} frame")]
    OutOfBounds(Rect, usize, usize),
    #[error("pixel ({row}, {col}) is saturated in every frame")]
    AllSaturated { row: usize, col: usize },
    #[error("invalid sequence: {0}")]
    Invalid(String),
    #[error("mask: {0}")]
    Mask(String),
    #[error(transparent)]
    Pgm(#[from] PgmError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Pixel rectangle: origin at `(x, y)` = (column, row).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        col >= self.x && col < self.x + self.width && row >= self.y && row < self.y + self.height
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.width > 0
            && self.height > 0
            && self.x + self.width <= width
            && self.y + self.height <= height
    }

    /// `inner` expressed in this rect's coordinates, mapped back to the parent frame.
    pub fn compose(&self, inner: Rect) -> Rect {
        Rect::new(self.x + inner.x, self.y + inner.y, inner.width, inner.height)
    }
}

/// A time-ordered stack of 2-D frames.
///
/// Samples are stored frame-major: `data[(frame * height + row) * width + col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    width: usize,
    height: usize,
    timestamps: Vec<f64>,
    data: Vec<f64>,
    saturation_value: f64,
}

impl FrameSequence {
    pub fn new(
        width: usize,
        height: usize,
        timestamps: Vec<f64>,
        data: Vec<f64>,
        saturation_value: f64,
    ) -> Result<Self, IngestError> {
        if width == 0 || height == 0 || timestamps.is_empty() {
            return Err(IngestError::Invalid(format!(
                "empty sequence ({width}x{height}x{})",
                timestamps.len()
            )));
        }
        validate_timestamps(&timestamps)?;
        if data.len() != width * height * timestamps.len() {
            return Err(IngestError::Invalid(format!(
                "data length {} != {width}x{height}x{}",
                data.len(),
                timestamps.len()
            )));
        }
        Ok(Self {
            width,
            height,
            timestamps,
            data,
            saturation_value,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_count(&self) -> usize {
        self.timestamps.len()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn saturation_value(&self) -> f64 {
        self.saturation_value
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn value(&self, frame: usize, row: usize, col: usize) -> f64 {
        self.data[(frame * self.height + row) * self.width + col]
    }

    /// Copies one pixel's time history into `out`.
    pub fn pixel_series_into(&self, row: usize, col: usize, out: &mut Vec<f64>) {
        let n = self.pixel_count();
        let offset = row * self.width + col;
        out.clear();
        out.extend((0..self.frame_count()).map(|k| self.data[k * n + offset]));
    }

    pub fn pixel_series(&self, row: usize, col: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.frame_count());
        self.pixel_series_into(row, col, &mut v);
        v
    }
}

fn validate_timestamps(ts: &[f64]) -> Result<(), IngestError> {
    for (i, &t) in ts.iter().enumerate() {
        let ok = t.is_finite() && t > 0.0 && (i == 0 || t > ts[i - 1]);
        if !ok {
            return Err(IngestError::Timestamps { index: i });
        }
    }
    Ok(())
}

/// Parsed manifest contents.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceManifest {
    pub frames: Vec<PathBuf>,
    pub timestamps: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub saturation_value: f64,
    pub units: String,
}

impl SequenceManifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, IngestError> {
        let mut width = None;
        let mut height = None;
        let mut saturation = None;
        let mut units = String::from("counts");
        let mut timestamps: Option<Vec<f64>> = None;
        let mut fps: Option<f64> = None;
        let mut frames = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                IngestError::Manifest(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| {
                IngestError::Manifest(format!("line {}: bad {what} {value:?}", lineno + 1))
            };
            match key {
                "width" => width = Some(value.parse::<usize>().map_err(|_| bad("width"))?),
                "height" => height = Some(value.parse::<usize>().map_err(|_| bad("height"))?),
                "saturation" => {
                    saturation = Some(value.parse::<f64>().map_err(|_| bad("saturation"))?)
                }
                "units" => units = value.to_string(),
                "fps" => fps = Some(value.parse::<f64>().map_err(|_| bad("fps"))?),
                "timestamps" => {
                    let ts = value
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| bad("timestamps"))?;
                    timestamps = Some(ts);
                }
                "frame" => frames.push(base_dir.join(value)),
                other => {
                    return Err(IngestError::Manifest(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }

        let width = width.ok_or_else(|| IngestError::Manifest("missing width".into()))?;
        let height = height.ok_or_else(|| IngestError::Manifest("missing height".into()))?;
        let timestamps = match (timestamps, fps) {
            (Some(ts), _) => ts,
            (None, Some(fps)) if fps > 0.0 => timestamps_from_fps(frames.len(), fps),
            (None, Some(_)) => return Err(IngestError::Manifest("fps must be positive".into())),
            (None, None) => return Err(IngestError::Manifest("missing timestamps or fps".into())),
        };
        if timestamps.len() != frames.len() {
            return Err(IngestError::Manifest(format!(
                "{} frames but {} timestamps",
                frames.len(),
                timestamps.len()
            )));
        }
        if frames.is_empty() {
            return Err(IngestError::Manifest("no frames listed".into()));
        }
        validate_timestamps(&timestamps)?;
        Ok(Self {
            frames,
            timestamps,
            width,
            height,
            saturation_value: saturation.unwrap_or(f64::INFINITY),
            units,
        })
    }
}

/// Frame `k` is sampled at `(k + 1) / fps`; the flash fires at t = 0.
pub fn timestamps_from_fps(frame_count: usize, fps: f64) -> Vec<f64> {
    (0..frame_count).map(|k| (k + 1) as f64 / fps).collect()
}

/// Parses one frame file: `height` lines of `width` comma-separated decimals.
pub fn read_frame_csv(path: &Path) -> Result<(usize, usize, Vec<f64>), IngestError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(std::io::BufReader::new(file));
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(IngestError::DimensionMismatch {
                    path: path.to_path_buf(),
                    expected_w: w,
                    expected_h: height,
                    found_w: record.len(),
                    found_h: height + 1,
                })
            }
            _ => {}
        }
        for cell in record.iter() {
            let v = cell.parse::<f64>().map_err(|_| IngestError::Parse {
                path: path.to_path_buf(),
                line,
                cell: cell.to_string(),
            })?;
            values.push(v);
        }
        height += 1;
    }
    Ok((width.unwrap_or(0), height, values))
}

pub fn load_sequence(manifest_path: impl AsRef<Path>) -> Result<FrameSequence, IngestError> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let manifest = SequenceManifest::parse(&text, base)?;

    let mut data = Vec::with_capacity(manifest.width * manifest.height * manifest.frames.len());
    for path in &manifest.frames {
        let (w, h, values) = read_frame_csv(path)?;
        if w != manifest.width || h != manifest.height {
            return Err(IngestError::DimensionMismatch {
                path: path.clone(),
                expected_w: manifest.width,
                expected_h: manifest.height,
                found_w: w,
                found_h: h,
            });
        }
        data.extend_from_slice(&values);
    }
    FrameSequence::new(
        manifest.width,
        manifest.height,
        manifest.timestamps,
        data,
        manifest.saturation_value,
    )
}

/// Writes `manifest.txt` and one `frame_NNNNN.csv` per frame into `dir`.
/// Returns the manifest path.
pub fn write_sequence(
    seq: &FrameSequence,
    dir: impl AsRef<Path>,
    units: &str,
) -> Result<PathBuf, IngestError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "width = {}", seq.width);
    let _ = writeln!(manifest, "height = {}", seq.height);
    let _ = writeln!(manifest, "saturation = {}", seq.saturation_value);
    let _ = writeln!(manifest, "units = {units}");
    let ts: Vec<String> = seq.timestamps.iter().map(|t| t.to_string()).collect();
    let _ = writeln!(manifest, "timestamps = {}", ts.join(", "));

    let mut buf = String::new();
    for k in 0..seq.frame_count() {
        let name = format!("frame_{k:05}.csv");
        let _ = writeln!(manifest, "frame = {name}");
        buf.clear();
        for row in seq.frame(k).chunks(seq.width) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    buf.push(',');
                }
                let _ = write!(buf, "{v}");
            }
            buf.push('\n');
        }
        let path = dir.join(&name);
        std::fs::write(&path, &buf).map_err(io_err(&path))?;
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(io_err(&path))?;
    Ok(path)
}

pub fn crop(seq: &FrameSequence, rect: Rect) -> Result<FrameSequence, IngestError> {
    if !rect.fits_in(seq.width, seq.height) {
        return Err(IngestError::OutOfBounds(rect, seq.width, seq.height));
    }
    let mut data = Vec::with_capacity(rect.area() * seq.frame_count());
    for k in 0..seq.frame_count() {
        let frame = seq.frame(k);
        for row in rect.y..rect.y + rect.height {
            let start = row * seq.width + rect.x;
            data.extend_from_slice(&frame[start..start + rect.width]);
        }
    }
    FrameSequence::new(
        rect.width,
        rect.height,
        seq.timestamps.clone(),
        data,
        seq.saturation_value,
    )
}

/// Smallest frame index from which the pixel stays strictly below saturation.
pub fn first_unsaturated_frame(
    seq: &FrameSequence,
    row: usize,
    col: usize,
) -> Result<usize, IngestError> {
    if row >= seq.height || col >= seq.width {
        return Err(IngestError::OutOfBounds(
            Rect::new(col, row, 1, 1),
            seq.width,
            seq.height,
        ));
    }
    let n = seq.pixel_count();
    let offset = row * seq.width + col;
    first_unsaturated(
        (0..seq.frame_count()).map(|k| seq.data[k * n + offset]),
        seq.frame_count(),
        seq.saturation_value,
    )
    .ok_or(IngestError::AllSaturated { row, col })
}

/// Index after the last sample at or above `saturation`; `None` if that is past the end.
pub(crate) fn first_unsaturated(
    series: impl DoubleEndedIterator<Item = f64>,
    len: usize,
    saturation: f64,
) -> Option<usize> {
    let first = series
        .rev()
        .position(|v| v >= saturation)
        .map_or(0, |from_end| len - from_end);
    (first < len).then_some(first)
}

/// Per-pixel class labels with a validity flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    class_count: usize,
    labels: Vec<u8>,
    valid: Vec<bool>,
}

impl LabelMask {
    pub fn new(
        width: usize,
        height: usize,
        class_count: usize,
        labels: Vec<u8>,
        valid: Vec<bool>,
    ) -> Result<Self, IngestError> {
        if labels.len() != width * height || valid.len() != width * height {
            return Err(IngestError::Mask(format!(
                "buffer sizes {} / {} do not match {width}x{height}",
                labels.len(),
                valid.len()
            )));
        }
        if class_count == 0 || class_count > INVALID_LABEL as usize {
            return Err(IngestError::Mask(format!("class count {class_count}")));
        }
        if let Some(i) = (0..labels.len()).find(|&i| valid[i] && labels[i] as usize >= class_count)
        {
            return Err(IngestError::Mask(format!(
                "pixel {i} has label {} >= {class_count}",
                labels[i]
            )));
        }
        Ok(Self {
            width,
            height,
            class_count,
            labels,
            valid,
        })
    }

    /// Every pixel valid.
    pub fn from_labels(
        width: usize,
        height: usize,
        class_count: usize,
        labels: Vec<u8>,
    ) -> Result<Self, IngestError> {
        let valid = vec![true; labels.len()];
        Self::new(width, height, class_count, labels, valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn label(&self, row: usize, col: usize) -> Option<u8> {
        let i = row * self.width + col;
        self.valid[i].then_some(self.labels[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Valid pixel count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for (l, _) in self.labels.iter().zip(&self.valid).filter(|(_, &v)| v) {
            counts[*l as usize] += 1;
        }
        counts
    }

    pub fn to_pgm(&self) -> GreyImage {
        let pixels = self
            .labels
            .iter()
            .zip(&self.valid)
            .map(|(&l, &v)| if v { l } else { INVALID_LABEL })
            .collect();
        GreyImage::new(self.width, self.height, pixels)
    }

    /// Ignored pixels come back with label [`INVALID_LABEL`].
    pub fn from_pgm(img: &GreyImage, class_count: usize) -> Result<Self, IngestError> {
        let valid = img.pixels.iter().map(|&p| p != INVALID_LABEL).collect();
        Self::new(img.width, img.height, class_count, img.pixels.clone(), valid)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IngestError> {
        Ok(self.to_pgm().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>, class_count: usize) -> Result<Self, IngestError> {
        Self::from_pgm(&GreyImage::load(path)?, class_count)
    }
}

/// Invalidates every pixel within `margin` (Chebyshev distance) of a pixel
/// with a different label or of the image edge. Labels are left untouched, so
/// the result depends only on labels and trimming is idempotent.
pub fn trim_mask(mask: &LabelMask, margin: usize) -> LabelMask {
    let mut out = mask.clone();
    if margin == 0 {
        return out;
    }
    let (w, h) = (mask.width, mask.height);

    // Separable sliding-window min/max: rows first, then columns.
    let mut row_min = vec![0u8; w * h];
    let mut row_max = vec![0u8; w * h];
    for r in 0..h {
        let line = &mask.labels[r * w..(r + 1) * w];
        for c in 0..w {
            let lo = c.saturating_sub(margin);
            let hi = (c + margin).min(w - 1);
            let window = &line[lo..=hi];
            row_min[r * w + c] = *window.iter().min().unwrap();
            row_max[r * w + c] = *window.iter().max().unwrap();
        }
    }
    for r in 0..h {
        let lo = r.saturating_sub(margin);
        let hi = (r + margin).min(h - 1);
        let near_edge_row = r < margin || r + margin >= h;
        for c in 0..w {
            let i = r * w + c;
            if !out.valid[i] {
                continue;
            }
            let near_edge = near_edge_row || c < margin || c + margin >= w;
            let (mut mn, mut mx) = (u8::MAX, u8::MIN);
            for rr in lo..=hi {
                mn = mn.min(row_min[rr * w + c]);
                mx = mx.max(row_max[rr * w + c]);
            }
            if near_edge || mn != mx {
                out.valid[i] = false;
            }
        }
    }
    out
}
