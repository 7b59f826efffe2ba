//! Synthetic flash-thermography videos.
//!
//! A scene is a set of rectangular regions, each with a temperature-time
//! profile. Rendering evaluates the profile at every timestamp, adds i.i.d.
//! Gaussian noise from a per-pixel stream and clamps to the sensor range.
//!
//! Two physical profiles are provided. A semi-infinite solid heated by an
//! instantaneous pulse cools as `A t^(-1/2)`. A slab of thickness `L` over an
//! interface with thermal reflection coefficient `R` follows the image-source
//! series
//!
//! ```text
//! T(t) = A t^(-1/2) [1 + 2 Σ_{n≥1} R^n exp(-n² L² / (α t))]
//! ```
//!
//! which is the adiabatic plate when `R = 1`.

use std::f64::consts::PI;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{timestamps_from_fps, FrameSequence, IngestError, LabelMask, Rect};
use crate::seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("profile evaluated at non-positive time {0}")]
    NonPositiveTime(f64),
    #[error("profile value {value} at t = {t} is not finite and positive")]
    BadValue { t: f64, value: f64 },
    #[error("layout does not tile the canvas: pixel ({row}, {col}) covered {count} times")]
    NotTiling { row: usize, col: usize, count: usize },
    #[error("region rect {0:?} leaves the {1}x{2} canvas")]
    RegionOutOfCanvas(Rect, usize, usize),
    #[error("inner rect {0:?} must lie strictly inside the {1}x{2} canvas")]
    InnerRect(Rect, usize, usize),
    #[error("gaps must be non-negative and non-decreasing: {0:?}")]
    Gaps(Vec<f64>),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("scene file: {0}")]
    Scene(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Temperature (data units) as a function of time since the flash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TemperatureProfile {
    PowerLaw {
        amplitude: f64,
        exponent: f64,
    },
    AdiabaticPlate {
        amplitude: f64,
        /// metres
        thickness: f64,
        /// m²/s
        diffusivity: f64,
        /// 1 for an insulated back face, 0 for no interface
        #[serde(default = "one")]
        reflection: f64,
    },
    /// `log10 T = Σ c_i (log10 t)^i`
    LogPolynomial { coefficients: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

impl TemperatureProfile {
    pub fn adiabatic_plate(amplitude: f64, thickness: f64, diffusivity: f64) -> Self {
        Self::AdiabaticPlate {
            amplitude,
            thickness,
            diffusivity,
            reflection: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Parameter(m.to_string()));
        match self {
            Self::PowerLaw { amplitude, exponent } => {
                if !(amplitude.is_finite() && *amplitude > 0.0 && exponent.is_finite()) {
                    return bad("power law needs finite amplitude > 0 and finite exponent");
                }
            }
            Self::AdiabaticPlate {
                amplitude,
                thickness,
                diffusivity,
                reflection,
            } => {
                if !(amplitude.is_finite() && *amplitude > 0.0) {
                    return bad("plate amplitude must be finite and > 0");
                }
                if !(thickness.is_finite() && *thickness > 0.0) {
                    return bad("plate thickness must be finite and > 0");
                }
                if !(diffusivity.is_finite() && *diffusivity > 0.0) {
                    return bad("diffusivity must be finite and > 0");
                }
                if !(0.0..=1.0).contains(reflection) {
                    return bad("reflection coefficient must lie in [0, 1]");
                }
            }
            Self::LogPolynomial { coefficients } => {
                if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
                    return bad("log polynomial needs finite coefficients");
                }
            }
        }
        Ok(())
    }
}

/// Evaluates `1 + 2 Σ_{n≥1} R^n exp(-n² x)`, stopping once the next term is
/// below 1e-12 of the running sum.
pub fn plate_series(x: f64, reflection: f64) -> f64 {
    if reflection == 1.0 && x < PI {
        // Poisson summation: Σ_{n∈Z} e^{-n² x} = √(π/x) Σ_{k∈Z} e^{-π² k² / x}
        let y = PI * PI / x;
        return (PI / x).sqrt() * partial_theta(y, 1.0);
    }
    partial_theta(x, reflection)
}

fn partial_theta(x: f64, r: f64) -> f64 {
    let mut sum = 1.0;
    let mut rn = 1.0;
    let mut n = 1u64;
    loop {
        rn *= r;
        let term = 2.0 * rn * (-((n * n) as f64) * x).exp();
        if term < 1e-12 * sum {
            return sum;
        }
        sum += term;
        n += 1;
    }
}

pub fn eval_profile(profile: &TemperatureProfile, t: f64) -> Result<f64, SynthError> {
    if !(t > 0.0) {
        return Err(SynthError::NonPositiveTime(t));
    }
    let value = match profile {
        TemperatureProfile::PowerLaw { amplitude, exponent } => amplitude * t.powf(*exponent),
        TemperatureProfile::AdiabaticPlate {
            amplitude,
            thickness,
            diffusivity,
            reflection,
        } => {
            let x = thickness * thickness / (diffusivity * t);
            amplitude / t.sqrt() * plate_series(x, *reflection)
        }
        TemperatureProfile::LogPolynomial { coefficients } => {
            let lt = t.log10();
            let log_value = coefficients.iter().rev().fold(0.0, |acc, c| acc * lt + c);
            10f64.powf(log_value)
        }
    };
    if !(value.is_finite() && value > 0.0) {
        return Err(SynthError::BadValue { t, value });
    }
    Ok(value)
}

/// Gaussian pixel noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    /// Default sigma: 0.5% of a reference amplitude.
    pub fn relative(amplitude: f64, seed: u64) -> Self {
        Self {
            sigma: 0.005 * amplitude,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub class_id: u8,
    pub rects: Vec<Rect>,
    pub profile: TemperatureProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionLayout {
    pub width: usize,
    pub height: usize,
    pub regions: Vec<Region>,
}

impl RegionLayout {
    /// Index of the region covering each pixel; fails unless every pixel is
    /// covered exactly once.
    pub fn region_index(&self) -> Result<Vec<usize>, SynthError> {
        let (w, h) = (self.width, self.height);
        if w == 0 || h == 0 {
            return Err(SynthError::Parameter("empty canvas".into()));
        }
        let mut owner = vec![usize::MAX; w * h];
        let mut count = vec![0usize; w * h];
        for (ri, region) in self.regions.iter().enumerate() {
            region.profile.validate()?;
            for rect in &region.rects {
                if !rect.fits_in(w, h) {
                    return Err(SynthError::RegionOutOfCanvas(*rect, w, h));
                }
                for row in rect.y..rect.y + rect.height {
                    for col in rect.x..rect.x + rect.width {
                        owner[row * w + col] = ri;
                        count[row * w + col] += 1;
                    }
                }
            }
        }
        if let Some(i) = count.iter().position(|&c| c != 1) {
            return Err(SynthError::NotTiling {
                row: i / w,
                col: i % w,
                count: count[i],
            });
        }
        Ok(owner)
    }

    pub fn class_count(&self) -> usize {
        self.regions
            .iter()
            .map(|r| r.class_id as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Ground-truth labels, all pixels valid.
    pub fn label_mask(&self) -> Result<LabelMask, SynthError> {
        let owner = self.region_index()?;
        let labels = owner.iter().map(|&r| self.regions[r].class_id).collect();
        Ok(LabelMask::from_labels(
            self.width,
            self.height,
            self.class_count(),
            labels,
        )?)
    }

    pub fn class_pixel_counts(&self) -> Result<Vec<usize>, SynthError> {
        Ok(self.label_mask()?.class_counts())
    }
}

const ROW_BLOCK: usize = 16;

/// Renders every pixel as its region's profile plus Gaussian noise, clamped to
/// `clamp`. The upper clamp bound becomes the sequence's saturation value.
pub fn render_video(
    layout: &RegionLayout,
    timestamps: &[f64],
    noise: NoiseSpec,
    clamp: (f64, f64),
) -> Result<FrameSequence, SynthError> {
    let owner = layout.region_index()?;
    if !(noise.sigma >= 0.0 && noise.sigma.is_finite()) {
        return Err(SynthError::Parameter(format!("noise sigma {}", noise.sigma)));
    }
    if !(clamp.0 <= clamp.1) {
        return Err(SynthError::Parameter(format!("clamp {clamp:?}")));
    }
    if timestamps.is_empty() || timestamps.windows(2).any(|p| p[1] <= p[0]) {
        return Err(SynthError::Ingest(IngestError::Timestamps { index: 0 }));
    }
    let curves = layout
        .regions
        .iter()
        .map(|r| {
            timestamps
                .iter()
                .map(|&t| eval_profile(&r.profile, t))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;

    let (w, h, nf) = (layout.width, layout.height, timestamps.len());
    let normal = Normal::new(0.0, noise.sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut data = vec![0.0; w * h * nf];

    for block_start in (0..h).step_by(ROW_BLOCK) {
        let block_end = (block_start + ROW_BLOCK).min(h);
        // pixel-major scratch for this block of rows
        let rows: Vec<Vec<f64>> = (block_start..block_end)
            .into_par_iter()
            .map(|row| {
                let mut buf = Vec::with_capacity(w * nf);
                for col in 0..w {
                    let curve = &curves[owner[row * w + col]];
                    if noise.sigma == 0.0 {
                        buf.extend(curve.iter().map(|v| v.clamp(clamp.0, clamp.1)));
                    } else {
                        let mut rng = seed::rng(noise.seed, &[row as u64, col as u64]);
                        buf.extend(curve.iter().map(|v| {
                            (v + normal.sample(&mut rng)).clamp(clamp.0, clamp.1)
                        }));
                    }
                }
                buf
            })
            .collect();
        for (dr, buf) in rows.iter().enumerate() {
            let row = block_start + dr;
            for col in 0..w {
                let series = &buf[col * nf..(col + 1) * nf];
                for (k, &v) in series.iter().enumerate() {
                    data[(k * h + row) * w + col] = v;
                }
            }
        }
    }
    Ok(FrameSequence::new(
        w,
        h,
        timestamps.to_vec(),
        data,
        clamp.1,
    )?)
}

/// One class as a rectangle strictly inside the canvas, the other filling the border.
pub fn composite_layout(
    width: usize,
    height: usize,
    inner: Rect,
    inner_region: (u8, TemperatureProfile),
    outer_region: (u8, TemperatureProfile),
) -> Result<RegionLayout, SynthError> {
    let strictly_inside = inner.width > 0
        && inner.height > 0
        && inner.x >= 1
        && inner.y >= 1
        && inner.x + inner.width < width
        && inner.y + inner.height < height;
    if !strictly_inside {
        return Err(SynthError::InnerRect(inner, width, height));
    }
    let bottom_y = inner.y + inner.height;
    let right_x = inner.x + inner.width;
    let border = vec![
        Rect::new(0, 0, width, inner.y),
        Rect::new(0, bottom_y, width, height - bottom_y),
        Rect::new(0, inner.y, inner.x, inner.height),
        Rect::new(right_x, inner.y, width - right_x, inner.height),
    ];
    Ok(RegionLayout {
        width,
        height,
        regions: vec![
            Region {
                class_id: inner_region.0,
                rects: vec![inner],
                profile: inner_region.1,
            },
            Region {
                class_id: outer_region.0,
                rects: border,
                profile: outer_region.1,
            },
        ],
    })
}

/// Centered `w x h` rect on a `width x height` canvas.
pub fn centered_rect(width: usize, height: usize, w: usize, h: usize) -> Rect {
    Rect::new((width - w) / 2, (height - h) / 2, w, h)
}

/// A uniform single-class layout.
pub fn uniform_layout(
    width: usize,
    height: usize,
    class_id: u8,
    profile: TemperatureProfile,
) -> RegionLayout {
    RegionLayout {
        width,
        height,
        regions: vec![Region {
            class_id,
            rects: vec![Rect::new(0, 0, width, height)],
            profile,
        }],
    }
}

/// Thermal properties for the four-quadrant delamination scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateMaterial {
    /// m²/s
    pub diffusivity: f64,
    /// full sample depth in metres, used for defect-free regions
    pub base_thickness: f64,
    /// surface amplitude A in data units
    pub amplitude: f64,
    /// nominal layer height in mm; gaps at or above it reflect fully
    pub layer_height: f64,
}

impl Default for PlateMaterial {
    /// PLA: k ≈ 0.13 W/(m·K), ρ ≈ 1250 kg/m³, c ≈ 1800 J/(kg·K).
    fn default() -> Self {
        Self {
            diffusivity: 5.8e-8,
            base_thickness: 0.010,
            amplitude: 200.0,
            layer_height: 0.3,
        }
    }
}

impl PlateMaterial {
    /// Interface reflection for a gap of `gap_mm`, linear in the gap fraction of a layer.
    pub fn contrast(&self, gap_mm: f64) -> f64 {
        (gap_mm / self.layer_height).clamp(0.0, 1.0)
    }

    pub fn profile_for_gap(&self, gap_mm: f64, depth_mm: f64) -> TemperatureProfile {
        if gap_mm == 0.0 {
            TemperatureProfile::adiabatic_plate(
                self.amplitude,
                self.base_thickness,
                self.diffusivity,
            )
        } else {
            TemperatureProfile::AdiabaticPlate {
                amplitude: self.amplitude,
                thickness: depth_mm * 1e-3,
                diffusivity: self.diffusivity,
                reflection: self.contrast(gap_mm),
            }
        }
    }
}

/// Four quadrants (top-left, top-right, bottom-left, bottom-right) labelled
/// 0..4 in order of `gaps_mm`. Gap 0 is sound material.
pub fn four_class_scene(
    width: usize,
    height: usize,
    gaps_mm: [f64; 4],
    depth_mm: f64,
    material: &PlateMaterial,
) -> Result<(RegionLayout, LabelMask), SynthError> {
    let monotone = gaps_mm.iter().all(|g| g.is_finite() && *g >= 0.0)
        && gaps_mm.windows(2).all(|p| p[1] >= p[0]);
    if !monotone {
        return Err(SynthError::Gaps(gaps_mm.to_vec()));
    }
    if !(depth_mm > 0.0) {
        return Err(SynthError::Parameter(format!("defect depth {depth_mm} mm")));
    }
    if width < 2 || height < 2 {
        return Err(SynthError::Parameter(format!("canvas {width}x{height}")));
    }
    let (hw, hh) = (width / 2, height / 2);
    let quadrants = [
        Rect::new(0, 0, hw, hh),
        Rect::new(hw, 0, width - hw, hh),
        Rect::new(0, hh, hw, height - hh),
        Rect::new(hw, hh, width - hw, height - hh),
    ];
    let regions = quadrants
        .iter()
        .zip(gaps_mm)
        .enumerate()
        .map(|(class, (rect, gap))| Region {
            class_id: class as u8,
            rects: vec![*rect],
            profile: material.profile_for_gap(gap, depth_mm),
        })
        .collect();
    let layout = RegionLayout {
        width,
        height,
        regions,
    };
    let mask = layout.label_mask()?;
    Ok((layout, mask))
}

/// Scene description file (TOML).
///
/// ```toml
/// width = 160
/// height = 120
/// frames = 300
/// fps = 15.0
/// clamp = [0.0, 254.0]
///
/// [noise]
/// sigma = 0.5
/// seed = 7
///
/// [[region]]
/// class = 0
/// rects = [[0, 0, 160, 120]]
/// profile = { kind = "power-law", amplitude = 100.0, exponent = -0.5 }
/// ```
///
/// Instead of `[[region]]` entries a `[four_class]` table with `gaps`,
/// `depth_mm` and an optional `[four_class.material]` builds the quadrant scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
    #[serde(default = "default_clamp")]
    pub clamp: [f64; 2],
    pub noise: NoiseSpec,
    #[serde(default, rename = "region")]
    pub regions: Vec<RegionEntry>,
    pub four_class: Option<FourClassEntry>,
}

fn default_clamp() -> [f64; 2] {
    [0.0, 254.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionEntry {
    pub class: u8,
    /// `[x, y, width, height]`
    pub rects: Vec<[usize; 4]>,
    pub profile: TemperatureProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourClassEntry {
    pub gaps: [f64; 4],
    pub depth_mm: f64,
    /// `[four_class.material]`; PLA defaults when absent
    #[serde(default)]
    pub material: Option<PlateMaterial>,
}

/// Everything needed to render a scene.
#[derive(Debug, Clone)]
pub struct Scene {
    pub layout: RegionLayout,
    pub mask: LabelMask,
    pub timestamps: Vec<f64>,
    pub noise: NoiseSpec,
    pub clamp: (f64, f64),
}

impl Scene {
    pub fn render(&self) -> Result<FrameSequence, SynthError> {
        render_video(&self.layout, &self.timestamps, self.noise, self.clamp)
    }
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        toml::from_str(text).map_err(|e| SynthError::Scene(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn build(&self) -> Result<Scene, SynthError> {
        if self.frames == 0 || !(self.fps > 0.0) {
            return Err(SynthError::Scene(format!(
                "need frames >= 1 and fps > 0 (got {}, {})",
                self.frames, self.fps
            )));
        }
        let layout = match (&self.four_class, self.regions.is_empty()) {
            (Some(fc), true) => {
                let material = fc.material.unwrap_or_default();
                four_class_scene(self.width, self.height, fc.gaps, fc.depth_mm, &material)?.0
            }
            (None, false) => RegionLayout {
                width: self.width,
                height: self.height,
                regions: self
                    .regions
                    .iter()
                    .map(|r| Region {
                        class_id: r.class,
                        rects: r
                            .rects
                            .iter()
                            .map(|&[x, y, w, h]| Rect::new(x, y, w, h))
                            .collect(),
                        profile: r.profile.clone(),
                    })
                    .collect(),
            },
            _ => {
                return Err(SynthError::Scene(
                    "give either [[region]] entries or a [four_class] table".into(),
                ))
            }
        };
        let mask = layout.label_mask()?;
        Ok(Scene {
            layout,
            mask,
            timestamps: timestamps_from_fps(self.frames, self.fps),
            noise: self.noise,
            clamp: (self.clamp[0], self.clamp[1]),
        })
    }
}
