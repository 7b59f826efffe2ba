//! Thermographic signal reconstruction.
//!
//! Each pixel's history is fitted in log-log space,
//! `log T ≈ Σ a_i (log t)^i`, by Householder QR on the Vandermonde system.
//! The log-time axis is mapped affinely onto [-1, 1] before factorization and
//! the solution is mapped back, so the reported coefficients are always in
//! the raw log-time basis. Derivatives are taken with respect to log time.
//!
//! All pixels of a sequence share timestamps, so one factorization serves
//! every pixel that starts at the same frame; [`fit_sequence`] caches them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{first_unsaturated, FrameSequence};

#[derive(Debug, Error)]
pub enum TsrError {
    #[error("non-positive temperature {value} at frame {frame}")]
    NonPositive { frame: usize, value: f64 },
    #[error("{usable} usable frames cannot determine a degree-{degree} fit")]
    Underdetermined { usable: usize, degree: usize },
    #[error("rank-deficient system (column {0})")]
    RankDeficient(usize),
    #[error("timestamps must be positive and strictly increasing")]
    Timestamps,
    #[error("series has {series} samples but there are {timestamps} timestamps")]
    LengthMismatch { series: usize, timestamps: usize },
    #[error("derivative features need degree >= 2, got {0}")]
    DegreeTooLow(usize),
    #[error("pixel saturated in every frame")]
    AllSaturated,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("feature file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LogBase {
    Ten,
    Natural,
}

impl LogBase {
    #[inline]
    pub fn log(self, v: f64) -> f64 {
        match self {
            LogBase::Ten => v.log10(),
            LogBase::Natural => v.ln(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LogBase::Ten => "10",
            LogBase::Natural => "e",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "10" => Some(LogBase::Ten),
            "e" | "ln" | "natural" => Some(LogBase::Natural),
            _ => None,
        }
    }
}

/// Dense polynomial, coefficients in ascending powers.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        Polynomial(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| i as f64 * c)
                .collect(),
        )
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.0
    }
}

/// Result of a log-log polynomial fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TsrFit {
    pub degree: usize,
    /// `a_0..=a_d` in the raw log-time basis
    pub coefficients: Vec<f64>,
    /// `[log t_min, log t_max]` over the frames used
    pub fit_domain: (f64, f64),
    /// root-mean-square residual in log units
    pub rms_residual: f64,
    pub log_base: LogBase,
}

impl TsrFit {
    pub fn polynomial(&self) -> Polynomial {
        Polynomial(self.coefficients.clone())
    }

    /// Fitted temperature at time `t`.
    pub fn reconstruct(&self, t: f64) -> f64 {
        let p = self.polynomial().eval(self.log_base.log(t));
        match self.log_base {
            LogBase::Ten => 10f64.powf(p),
            LogBase::Natural => p.exp(),
        }
    }
}

/// Householder QR of the scaled Vandermonde matrix for one time axis.
#[derive(Debug, Clone)]
pub struct LogLogFitter {
    degree: usize,
    rows: usize,
    center: f64,
    half_width: f64,
    domain: (f64, f64),
    /// column-major Householder vectors (rows x cols); v[j] starts at row j
    reflectors: Vec<f64>,
    betas: Vec<f64>,
    /// upper-triangular R, row-major cols x cols
    r: Vec<f64>,
}

impl LogLogFitter {
    /// Factorizes for `log_times` (already logged, strictly increasing).
    pub fn new(log_times: &[f64], degree: usize) -> Result<Self, TsrError> {
        let m = log_times.len();
        let n = degree + 1;
        if m < n {
            return Err(TsrError::Underdetermined {
                usable: m,
                degree,
            });
        }
        let (lo, hi) = (log_times[0], log_times[m - 1]);
        let center = 0.5 * (lo + hi);
        let half_width = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };

        // Vandermonde in the scaled variable, column-major.
        let mut a = vec![0.0; m * n];
        for (k, &x) in log_times.iter().enumerate() {
            let u = (x - center) / half_width;
            let mut p = 1.0;
            for j in 0..n {
                a[j * m + k] = p;
                p *= u;
            }
        }

        let mut betas = vec![0.0; n];
        let mut r = vec![0.0; n * n];
        let mut max_diag: f64 = 0.0;
        for j in 0..n {
            let (head, tail) = a.split_at_mut((j + 1) * m);
            let col = &mut head[j * m..];
            let norm = col[j..].iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = if col[j] > 0.0 { -norm } else { norm };
            // v = x - alpha e_1, stored in place; beta = 2 / (v·v)
            col[j] -= alpha;
            let vnorm2: f64 = col[j..].iter().map(|v| v * v).sum();
            let beta = if vnorm2 > 0.0 { 2.0 / vnorm2 } else { 0.0 };
            betas[j] = beta;
            r[j * n + j] = alpha;
            for jj in (j + 1)..n {
                let other = &mut tail[(jj - j - 1) * m..(jj - j) * m];
                let dot: f64 = col[j..].iter().zip(&other[j..]).map(|(v, o)| v * o).sum();
                let s = beta * dot;
                for (o, v) in other[j..].iter_mut().zip(&col[j..]) {
                    *o -= s * v;
                }
                r[j * n + jj] = other[j];
            }
            max_diag = max_diag.max(alpha.abs());
        }
        let tol = max_diag * 1e-12 * m as f64;
        if let Some(j) = (0..n).find(|&j| r[j * n + j].abs() <= tol) {
            return Err(TsrError::RankDeficient(j));
        }
        Ok(Self {
            degree,
            rows: m,
            center,
            half_width,
            domain: (lo, hi),
            reflectors: a,
            betas,
            r,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Least-squares solution for log-values `y`: raw-basis coefficients and
    /// the rms residual.
    pub fn solve(&self, y: &[f64]) -> (Vec<f64>, f64) {
        let (m, n) = (self.rows, self.degree + 1);
        debug_assert_eq!(y.len(), m);
        let mut qty = y.to_vec();
        for j in 0..n {
            let v = &self.reflectors[j * m..(j + 1) * m];
            let dot: f64 = v[j..].iter().zip(&qty[j..]).map(|(a, b)| a * b).sum();
            let s = self.betas[j] * dot;
            for (q, a) in qty[j..].iter_mut().zip(&v[j..]) {
                *q -= s * a;
            }
        }
        let mut b = vec![0.0; n];
        for j in (0..n).rev() {
            let mut acc = qty[j];
            for jj in (j + 1)..n {
                acc -= self.r[j * n + jj] * b[jj];
            }
            b[j] = acc / self.r[j * n + j];
        }
        let rss: f64 = qty[n..].iter().map(|v| v * v).sum();
        (self.to_raw_basis(&b), (rss / m as f64).sqrt())
    }

    /// Re-expands `Σ b_j ((x - c)/h)^j` in powers of `x`.
    fn to_raw_basis(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let (c, h) = (self.center, self.half_width);
        let mut acc = vec![0.0; n];
        acc[0] = b[n - 1];
        let mut len = 1;
        for j in (0..n - 1).rev() {
            // acc <- acc * (x - c) / h + b_j
            let mut next = vec![0.0; n];
            for i in 0..len {
                next[i + 1] += acc[i] / h;
                next[i] -= c * acc[i] / h;
            }
            next[0] += b[j];
            acc = next;
            len += 1;
        }
        acc
    }

    pub fn fit_logged(&self, log_values: &[f64], log_base: LogBase) -> TsrFit {
        let (coefficients, rms_residual) = self.solve(log_values);
        TsrFit {
            degree: self.degree,
            coefficients,
            fit_domain: self.domain,
            rms_residual,
            log_base,
        }
    }
}

fn validate_timestamps(ts: &[f64]) -> Result<(), TsrError> {
    let ok = ts.iter().all(|t| t.is_finite() && *t > 0.0) && ts.windows(2).all(|p| p[1] > p[0]);
    if ok {
        Ok(())
    } else {
        Err(TsrError::Timestamps)
    }
}

fn log_series(
    series: &[f64],
    first_frame: usize,
    log_base: LogBase,
    out: &mut Vec<f64>,
) -> Result<(), TsrError> {
    out.clear();
    for (k, &v) in series.iter().enumerate().skip(first_frame) {
        if !(v > 0.0) || !v.is_finite() {
            return Err(TsrError::NonPositive { frame: k, value: v });
        }
        out.push(log_base.log(v));
    }
    Ok(())
}

/// Fits one pixel's series from `first_frame` on.
pub fn fit_pixel(
    series: &[f64],
    timestamps: &[f64],
    degree: usize,
    first_frame: usize,
    log_base: LogBase,
) -> Result<TsrFit, TsrError> {
    if series.len() != timestamps.len() {
        return Err(TsrError::LengthMismatch {
            series: series.len(),
            timestamps: timestamps.len(),
        });
    }
    validate_timestamps(timestamps)?;
    let usable = timestamps.len().saturating_sub(first_frame);
    if usable < degree + 1 {
        return Err(TsrError::Underdetermined { usable, degree });
    }
    let mut y = Vec::with_capacity(usable);
    log_series(series, first_frame, log_base, &mut y)?;
    let log_times: Vec<f64> = timestamps[first_frame..]
        .iter()
        .map(|&t| log_base.log(t))
        .collect();
    let fitter = LogLogFitter::new(&log_times, degree)?;
    Ok(fitter.fit_logged(&y, log_base))
}

/// First and second log-time derivative polynomials of a fit.
pub fn derivatives(fit: &TsrFit) -> Result<(Polynomial, Polynomial), TsrError> {
    if fit.degree < 2 {
        return Err(TsrError::DegreeTooLow(fit.degree));
    }
    let first = fit.polynomial().derivative();
    let second = first.derivative();
    Ok((first, second))
}

/// How fit and derivative coefficients are laid out in a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Packing {
    /// `(d+1) + d + (d-1) = 3d` values
    ConcatTruncated,
    /// every block zero-padded to `d+1`: `3(d+1)` values
    #[default]
    ConcatPadded,
}

impl Packing {
    pub fn len(self, degree: usize) -> usize {
        match self {
            Packing::ConcatTruncated => 3 * degree,
            Packing::ConcatPadded => 3 * (degree + 1),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Packing::ConcatTruncated => "concat-truncated",
            Packing::ConcatPadded => "concat-padded",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "concat-truncated" => Some(Packing::ConcatTruncated),
            "concat-padded" => Some(Packing::ConcatPadded),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsrFeatureVector {
    pub values: Vec<f64>,
    pub packing: Packing,
}

pub fn pack_features(fit: &TsrFit, packing: Packing) -> Result<TsrFeatureVector, TsrError> {
    let mut values = Vec::with_capacity(packing.len(fit.degree));
    pack_into(fit, packing, &mut values)?;
    Ok(TsrFeatureVector { values, packing })
}

fn pack_into(fit: &TsrFit, packing: Packing, out: &mut Vec<f64>) -> Result<(), TsrError> {
    let (first, second) = derivatives(fit)?;
    let block = fit.degree + 1;
    for coeffs in [&fit.coefficients[..], first.coefficients(), second.coefficients()] {
        out.extend_from_slice(coeffs);
        if packing == Packing::ConcatPadded {
            out.extend(std::iter::repeat(0.0).take(block - coeffs.len()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SaturationHandling {
    /// each pixel starts at its own first unsaturated frame
    #[default]
    PerPixel,
    /// use every frame regardless of saturation
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsrConfig {
    pub degree: usize,
    pub packing: Packing,
    pub log_base: LogBase,
    pub saturation: SaturationHandling,
}

impl Default for TsrConfig {
    fn default() -> Self {
        Self {
            degree: 4,
            packing: Packing::ConcatPadded,
            log_base: LogBase::Ten,
            saturation: SaturationHandling::PerPixel,
        }
    }
}

/// A `width x height` grid of feature vectors, row-major, with a per-pixel
/// validity flag for pixels whose fit failed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub width: usize,
    pub height: usize,
    pub degree: usize,
    pub packing: Packing,
    pub log_base: LogBase,
    pub scaling_pending: bool,
    pub n_features: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

const FEATURE_MAGIC: &str = "tsr-features v1";

impl FeatureImage {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn vector(&self, index: usize) -> Option<&[f64]> {
        self.valid[index]
            .then(|| &self.values[index * self.n_features..(index + 1) * self.n_features])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TsrError> {
        let mut s = String::new();
        let _ = writeln!(s, "{FEATURE_MAGIC}");
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "height = {}", self.height);
        let _ = writeln!(s, "degree = {}", self.degree);
        let _ = writeln!(s, "packing = {}", self.packing.as_str());
        let _ = writeln!(s, "log_base = {}", self.log_base.as_str());
        let _ = writeln!(s, "scaling_pending = {}", self.scaling_pending);
        let _ = writeln!(s, "columns = {}", self.n_features);
        s.push_str("valid");
        for i in 0..self.n_features {
            let _ = write!(s, ",f{i}");
        }
        s.push('\n');
        w.write_all(s.as_bytes())?;
        for (i, row) in self.values.chunks(self.n_features.max(1)).enumerate() {
            s.clear();
            s.push(if self.valid[i] { '1' } else { '0' });
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
            w.write_all(s.as_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TsrError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: std::io::Read>(r: R) -> Result<Self, TsrError> {
        let bad = |m: String| TsrError::Format(m);
        let mut lines = BufReader::new(r).lines();
        let mut next = || -> Result<String, TsrError> {
            lines
                .next()
                .ok_or_else(|| TsrError::Format("unexpected end of file".into()))?
                .map_err(TsrError::from)
        };
        if next()?.trim() != FEATURE_MAGIC {
            return Err(bad("missing feature-image header".into()));
        }
        let mut header = BTreeMap::new();
        for _ in 0..7 {
            let line = next()?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("bad header line {line:?}")))?;
            header.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            header
                .get(k)
                .cloned()
                .ok_or_else(|| TsrError::Format(format!("missing header key {k}")))
        };
        let num = |k: &str| -> Result<usize, TsrError> {
            get(k)?
                .parse()
                .map_err(|_| TsrError::Format(format!("bad {k}")))
        };
        let width = num("width")?;
        let height = num("height")?;
        let degree = num("degree")?;
        let n_features = num("columns")?;
        let packing =
            Packing::parse(&get("packing")?).ok_or_else(|| bad("unknown packing".into()))?;
        let log_base =
            LogBase::parse(&get("log_base")?).ok_or_else(|| bad("unknown log base".into()))?;
        let scaling_pending = get("scaling_pending")?
            .parse()
            .map_err(|_| bad("bad scaling_pending".into()))?;
        let _columns_line = next()?;

        let n = width * height;
        let mut values = Vec::with_capacity(n * n_features);
        let mut valid = Vec::with_capacity(n);
        for i in 0..n {
            let line = next()?;
            let mut cells = line.trim_end().split(',');
            let flag = cells.next().unwrap_or("");
            valid.push(match flag {
                "1" => true,
                "0" => false,
                _ => return Err(bad(format!("row {i}: bad validity flag {flag:?}"))),
            });
            let before = values.len();
            for c in cells {
                values.push(
                    c.parse::<f64>()
                        .map_err(|_| bad(format!("row {i}: bad value {c:?}")))?,
                );
            }
            if values.len() - before != n_features {
                return Err(bad(format!(
                    "row {i}: {} values, expected {n_features}",
                    values.len() - before
                )));
            }
        }
        Ok(Self {
            width,
            height,
            degree,
            packing,
            log_base,
            scaling_pending,
            n_features,
            values,
            valid,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TsrError> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

const PIXEL_CHUNK: usize = 256;

/// Fits every pixel. Pixels whose fit fails are flagged invalid (features
/// zeroed) instead of aborting the batch.
pub fn fit_sequence(seq: &FrameSequence, config: &TsrConfig) -> FeatureImage {
    let n_pixels = seq.pixel_count();
    let nf = seq.frame_count();
    let n_features = config.packing.len(config.degree);
    let data = seq.data();
    let sat = seq.saturation_value();

    let first_frames: Vec<Option<usize>> = (0..n_pixels)
        .into_par_iter()
        .map(|p| match config.saturation {
            SaturationHandling::Ignore => Some(0),
            SaturationHandling::PerPixel => {
                first_unsaturated((0..nf).map(|k| data[k * n_pixels + p]), nf, sat)
            }
        })
        .collect();

    let log_times: Vec<f64> = seq
        .timestamps()
        .iter()
        .map(|&t| config.log_base.log(t))
        .collect();
    let mut starts: Vec<usize> = first_frames.iter().flatten().copied().collect();
    starts.sort_unstable();
    starts.dedup();
    let fitters: BTreeMap<usize, Result<LogLogFitter, TsrError>> = starts
        .into_par_iter()
        .map(|s| (s, LogLogFitter::new(&log_times[s..], config.degree)))
        .collect();

    let mut values = vec![0.0; n_pixels * n_features];
    let mut valid = vec![false; n_pixels];
    values
        .par_chunks_mut(PIXEL_CHUNK * n_features)
        .zip(valid.par_chunks_mut(PIXEL_CHUNK))
        .enumerate()
        .for_each(|(chunk, (vals, flags))| {
            let mut series = Vec::with_capacity(nf);
            let mut logged = Vec::with_capacity(nf);
            let mut packed = Vec::with_capacity(n_features);
            for (i, flag) in flags.iter_mut().enumerate() {
                let p = chunk * PIXEL_CHUNK + i;
                let Some(start) = first_frames[p] else {
                    continue;
                };
                let Some(Ok(fitter)) = fitters.get(&start) else {
                    continue;
                };
                series.clear();
                series.extend((0..nf).map(|k| data[k * n_pixels + p]));
                if log_series(&series, start, config.log_base, &mut logged).is_err() {
                    continue;
                }
                let fit = fitter.fit_logged(&logged, config.log_base);
                packed.clear();
                if pack_into(&fit, config.packing, &mut packed).is_err() {
                    continue;
                }
                if packed.iter().all(|v| v.is_finite()) {
                    vals[i * n_features..(i + 1) * n_features].copy_from_slice(&packed);
                    *flag = true;
                }
            }
        });

    FeatureImage {
        width: seq.width(),
        height: seq.height(),
        degree: config.degree,
        packing: config.packing,
        log_base: config.log_base,
        scaling_pending: true,
        n_features,
        values,
        valid,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn times(n: usize) -> Vec<f64> {
        (1..=n).map(|k| k as f64 / 15.0).collect()
    }

    #[test]
    fn power_law_recovers_slope() {
        let ts = times(100);
        let series: Vec<f64> = ts.iter().map(|t| t.powf(-0.5)).collect();
        let fit = fit_pixel(&series, &ts, 4, 0, LogBase::Ten).unwrap();
        assert!((fit.coefficients[1] + 0.5).abs() < 1e-10);
        for (i, a) in fit.coefficients.iter().enumerate() {
            if i != 1 {
                assert!(a.abs() < 1e-10, "a_{i} = {a}");
            }
        }
        assert!(fit.rms_residual < 1e-10);
    }

    #[test]
    fn constant_series() {
        let ts = times(50);
        let fit = fit_pixel(&vec![2.0; 50], &ts, 4, 0, LogBase::Ten).unwrap();
        assert!((fit.coefficients[0] - 2f64.log10()).abs() < 1e-12);
        assert!(fit.coefficients[1..].iter().all(|a| a.abs() < 1e-11));
    }

    #[test]
    fn fit_errors() {
        let ts = times(4);
        assert!(matches!(
            fit_pixel(&[1.0, 0.0, 1.0, 1.0], &ts, 1, 0, LogBase::Ten),
            Err(TsrError::NonPositive { frame: 1, .. })
        ));
        assert!(matches!(
            fit_pixel(&[1.0; 4], &ts, 4, 0, LogBase::Ten),
            Err(TsrError::Underdetermined { usable: 4, degree: 4 })
        ));
        assert!(matches!(
            fit_pixel(&[1.0; 4], &ts, 2, 2, LogBase::Ten),
            Err(TsrError::Underdetermined { usable: 2, degree: 2 })
        ));
        assert!(matches!(
            fit_pixel(&[1.0; 3], &ts, 1, 0, LogBase::Ten),
            Err(TsrError::LengthMismatch { .. })
        ));
        // first frame saturated and skipped: zero there is fine
        assert!(fit_pixel(&[0.0, 1.0, 1.0, 1.0], &ts, 1, 1, LogBase::Ten).is_ok());
    }

    #[test]
    fn derivative_examples() {
        let fit = |c: Vec<f64>| TsrFit {
            degree: c.len() - 1,
            coefficients: c,
            fit_domain: (0.0, 1.0),
            rms_residual: 0.0,
            log_base: LogBase::Ten,
        };
        let (d1, d2) = derivatives(&fit(vec![1.0, -0.5, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(d1.0, vec![-0.5, 0.0, 0.0, 0.0]);
        assert_eq!(d2.0, vec![0.0, 0.0, 0.0]);
        let (d1, d2) = derivatives(&fit(vec![0.0, 0.0, 1.0])).unwrap();
        assert_eq!(d1.0, vec![0.0, 2.0]);
        assert_eq!(d2.0, vec![2.0]);
        assert!(matches!(
            derivatives(&fit(vec![1.0, 2.0])),
            Err(TsrError::DegreeTooLow(1))
        ));
    }

    #[test]
    fn packing_lengths() {
        let mk = |d: usize| TsrFit {
            degree: d,
            coefficients: (0..=d).map(|i| i as f64 + 1.0).collect(),
            fit_domain: (0.0, 1.0),
            rms_residual: 0.0,
            log_base: LogBase::Ten,
        };
        assert_eq!(pack_features(&mk(4), Packing::ConcatPadded).unwrap().values.len(), 15);
        assert_eq!(pack_features(&mk(4), Packing::ConcatTruncated).unwrap().values.len(), 12);
        assert_eq!(pack_features(&mk(8), Packing::ConcatTruncated).unwrap().values.len(), 24);
        assert_eq!(pack_features(&mk(8), Packing::ConcatPadded).unwrap().values.len(), 27);
        let v = pack_features(&mk(2), Packing::ConcatPadded).unwrap().values;
        // a = [1,2,3], first = [2,6], second = [6]
        assert_eq!(v, vec![1.0, 2.0, 3.0, 2.0, 6.0, 0.0, 6.0, 0.0, 0.0]);
        let v = pack_features(&mk(2), Packing::ConcatTruncated).unwrap().values;
        assert_eq!(v, vec![1.0, 2.0, 3.0, 2.0, 6.0, 6.0]);
    }

    #[test]
    fn natural_log_gives_same_slope() {
        let ts = times(60);
        let series: Vec<f64> = ts.iter().map(|t| 3.0 * t.powf(-0.5)).collect();
        let fit = fit_pixel(&series, &ts, 3, 0, LogBase::Natural).unwrap();
        assert!((fit.coefficients[0] - 3f64.ln()).abs() < 1e-10);
        assert!((fit.coefficients[1] + 0.5).abs() < 1e-10);
        assert!((fit.reconstruct(2.0) - 3.0 / 2f64.sqrt()).abs() < 1e-9);
    }
}
