//! Procedural image domain with known, controllable factors of variation.
//!
//! Each image shows one of `K` glyph shapes (the class) on a gray background.
//! Five scalar factors modulate the rendering: glyph scale, additive
//! brightness, glyph hue, horizontal position and background level. Any
//! factor can additionally be made *sensitive*: its normalized position `t`
//! in its range scales glyph contrast by `1 - s·t`, which degrades class
//! evidence and produces a controllable accuracy gap along that factor.
//!
//! Images are quantized to 8 bits at render time, so a dataset written to
//! PNG and read back is bit-identical to the one held in memory.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, Rng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let iv = Interval { lo, hi };
        iv.validate()?;
        Ok(iv)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::input(alloc::format!("degenerate interval [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Position of `v` in the interval, 0 at `lo` and 1 at `hi`.
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.lo) / self.width()
    }

    pub fn lerp(&self, t: f64) -> f64 {
        self.lo + t * self.width()
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderEffect {
    Scale,
    Brightness,
    Hue,
    PositionX,
    BackgroundLevel,
}

impl RenderEffect {
    pub const ALL: [RenderEffect; 5] = [
        RenderEffect::Scale,
        RenderEffect::Brightness,
        RenderEffect::Hue,
        RenderEffect::PositionX,
        RenderEffect::BackgroundLevel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RenderEffect::Scale => "scale",
            RenderEffect::Brightness => "brightness",
            RenderEffect::Hue => "hue",
            RenderEffect::PositionX => "position_x",
            RenderEffect::BackgroundLevel => "background_level",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        RenderEffect::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::input(alloc::format!("unknown render effect `{s}`")))
    }

    /// Range used by [`DatasetSpec::desk`].
    pub fn default_range(self) -> Interval {
        match self {
            RenderEffect::Scale => Interval { lo: 0.5, hi: 1.0 },
            RenderEffect::Brightness => Interval { lo: -0.25, hi: 0.25 },
            RenderEffect::Hue => Interval { lo: 0.0, hi: 0.8 },
            RenderEffect::PositionX => Interval { lo: -0.15, hi: 0.15 },
            RenderEffect::BackgroundLevel => Interval { lo: 0.25, hi: 0.45 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub range: Interval,
    pub render_effect: RenderEffect,
    /// Contrast attenuation strength; 0 leaves class evidence untouched.
    pub sensitivity_strength: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub factors: Vec<FactorSpec>,
    /// Standard deviation of per-pixel Gaussian noise added after shading.
    pub noise_sigma: f64,
}

/// Glyph shapes available as classes, in class-index order.
pub const GLYPHS: [&str; 6] = ["disk", "square", "triangle", "plus", "ring", "diamond"];

impl DatasetSpec {
    /// 32×32 RGB, five classes, one factor per render effect, no sensitivity.
    pub fn desk() -> Self {
        DatasetSpec {
            height: 32,
            width: 32,
            num_classes: 5,
            factors: RenderEffect::ALL
                .into_iter()
                .map(|e| FactorSpec {
                    name: e.as_str().to_string(),
                    range: e.default_range(),
                    render_effect: e,
                    sensitivity_strength: 0.0,
                })
                .collect(),
            noise_sigma: 0.02,
        }
    }

    /// Desk spec with one effect made sensitive with strength `s`.
    pub fn desk_with_sensitivity(effect: RenderEffect, s: f64) -> Self {
        let mut spec = Self::desk();
        for f in &mut spec.factors {
            if f.render_effect == effect {
                f.sensitivity_strength = s;
            }
        }
        spec
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn factor_index(&self, effect: RenderEffect) -> Option<usize> {
        self.factors.iter().position(|f| f.render_effect == effect)
    }

    pub fn factor_by_name(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::input("image must be at least 8×8"));
        }
        if self.num_classes < 2 || self.num_classes > GLYPHS.len() {
            return Err(Error::input(alloc::format!("num_classes must be in [2, {}]", GLYPHS.len())));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::input("noise_sigma must be finite and non-negative"));
        }
        for f in &self.factors {
            f.range.validate()?;
            if !(f.sensitivity_strength >= 0.0 && f.sensitivity_strength <= 1.0) {
                return Err(Error::input(alloc::format!("factor `{}`: sensitivity must lie in [0, 1]", f.name)));
            }
        }
        Ok(())
    }
}

/// 8-bit RGB image stored row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Image { height, width, data: vec![0; height * width * 3] }
    }

    /// Quantizes channel values in `[0, 1]` laid out height × width × 3.
    pub fn from_unit_hwc(height: usize, width: usize, values: &[f32]) -> Self {
        debug_assert_eq!(values.len(), height * width * 3);
        Image { height, width, data: values.iter().map(|&v| quantize(f64::from(v))).collect() }
    }

    /// Quantizes channel values in `[0, 1]` laid out 3 × height × width.
    pub fn from_unit_chw(height: usize, width: usize, values: &[f32]) -> Self {
        let plane = height * width;
        debug_assert_eq!(values.len(), plane * 3);
        let mut img = Image::new(height, width);
        for p in 0..plane {
            for c in 0..3 {
                img.data[p * 3 + c] = quantize(f64::from(values[c * plane + p]));
            }
        }
        img
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        f32::from(self.data[(y * self.width + x) * 3 + c]) / 255.0
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| {
            [f64::from(p[0]) / 255.0, f64::from(p[1]) / 255.0, f64::from(p[2]) / 255.0]
        })
    }

    /// Writes the image as planar float channels into `out` (length 3·H·W).
    pub fn write_chw(&self, out: &mut [f32]) {
        let plane = self.height * self.width;
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = f32::from(px[c]) / 255.0;
            }
        }
    }

    /// Copies `tile` into this image with its top-left corner at `(y0, x0)`.
    pub fn blit(&mut self, tile: &Image, y0: usize, x0: usize) {
        for y in 0..tile.height {
            let dst = ((y0 + y) * self.width + x0) * 3;
            let src = y * tile.width * 3;
            self.data[dst..dst + tile.width * 3].copy_from_slice(&tile.data[src..src + tile.width * 3]);
        }
    }
}

fn quantize(v: f64) -> u8 {
    libm::round(v.clamp(0.0, 1.0) * 255.0) as u8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
    pub factors: Vec<f64>,
}

/// Product of `1 - s·t` over all sensitive factors.
pub fn contrast_attenuation(factors: &[f64], spec: &DatasetSpec) -> f64 {
    spec.factors
        .iter()
        .zip(factors)
        .filter(|(f, _)| f.sensitivity_strength > 0.0)
        .map(|(f, &v)| 1.0 - f.sensitivity_strength * f.range.normalize(v).clamp(0.0, 1.0))
        .product()
}

struct Shading {
    radius: f64,
    center_x: f64,
    brightness: f64,
    glyph_rgb: [f64; 3],
    background: f64,
    contrast: f64,
}

impl Shading {
    fn resolve(factors: &[f64], spec: &DatasetSpec) -> Self {
        let size = spec.height.min(spec.width) as f64;
        let mut out = Shading {
            radius: 0.75 * 0.3 * size,
            center_x: spec.width as f64 / 2.0,
            brightness: 0.0,
            glyph_rgb: hsv_to_rgb(0.0, 0.7, 0.9),
            background: 0.35,
            contrast: contrast_attenuation(factors, spec),
        };
        for (f, &v) in spec.factors.iter().zip(factors) {
            match f.render_effect {
                RenderEffect::Scale => out.radius = v * 0.3 * size,
                RenderEffect::Brightness => out.brightness = v,
                RenderEffect::Hue => out.glyph_rgb = hsv_to_rgb(v, 0.7, 0.9),
                RenderEffect::PositionX => out.center_x = spec.width as f64 * (0.5 + v),
                RenderEffect::BackgroundLevel => out.background = v,
            }
        }
        out
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h - libm::floor(h)) * 6.0;
    let sector = libm::floor(h6);
    let frac = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * frac);
    let t = v * (1.0 - s * (1.0 - frac));
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Approximate signed distance (pixels) from `(dx, dy)` to glyph `class`
/// of nominal radius `r`, with `dy` pointing up.
fn glyph_distance(class: usize, dx: f64, dy: f64, r: f64) -> f64 {
    let ax = libm::fabs(dx);
    let ay = libm::fabs(dy);
    match class {
        0 => libm::hypot(dx, dy) - r,
        1 => ax.max(ay) - 0.85 * r,
        2 => {
            // Equilateral triangle, apex up.
            let k = libm::sqrt(3.0);
            let half = 0.95 * r;
            let mut px = ax - half;
            let mut py = dy + half / k;
            if px + k * py > 0.0 {
                let (nx, ny) = ((px - k * py) / 2.0, (-k * px - py) / 2.0);
                px = nx;
                py = ny;
            }
            px -= px.clamp(-2.0 * half, 0.0);
            let d = libm::hypot(px, py);
            if py > 0.0 {
                -d
            } else {
                d
            }
        }
        3 => {
            let t = 0.33 * r;
            (ax - r).max(ay - t).min((ay - r).max(ax - t))
        }
        4 => libm::fabs(libm::hypot(dx, dy) - 0.7 * r) - 0.3 * r,
        _ => (ax + ay - r) / core::f64::consts::SQRT_2,
    }
}

/// Renders one sample. Deterministic in `(factors, label, spec, seed)`.
pub fn render(factors: &[f64], label: usize, spec: &DatasetSpec, seed: u64) -> Result<Sample> {
    if factors.len() != spec.num_factors() {
        return Err(Error::input(alloc::format!(
            "expected {} factors, got {}",
            spec.num_factors(),
            factors.len()
        )));
    }
    if label >= spec.num_classes {
        return Err(Error::input(alloc::format!("label {label} outside [0, {})", spec.num_classes)));
    }
    for (f, &v) in spec.factors.iter().zip(factors) {
        if !f.range.contains(v) {
            return Err(Error::input(alloc::format!(
                "factor `{}` = {v} outside [{}, {}]",
                f.name,
                f.range.lo,
                f.range.hi
            )));
        }
    }

    let shade = Shading::resolve(factors, spec);
    let (h, w) = (spec.height, spec.width);
    let center_y = h as f64 / 2.0;
    let mut noise = Rng::new(seed, 0);
    let mut values = vec![0f32; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 + 0.5 - shade.center_x;
            let dy = center_y - (y as f64 + 0.5);
            let mask = (0.5 - glyph_distance(label, dx, dy, shade.radius)).clamp(0.0, 1.0);
            for c in 0..3 {
                let base = shade.background + shade.contrast * mask * (shade.glyph_rgb[c] - shade.background);
                let lit = (base + shade.brightness).clamp(0.0, 1.0);
                let noisy = if spec.noise_sigma > 0.0 { lit + spec.noise_sigma * noise.normal() } else { lit };
                values[(y * w + x) * 3 + c] = noisy.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(Sample { image: Image::from_unit_hwc(h, w, &values), label, factors: factors.to_vec() })
}

/// Seed handed to [`render`] for dataset index `index`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

/// Draws one sample's factors and label from its own stream.
pub fn draw_sample(spec: &DatasetSpec, seed: u64, index: usize, label_dist: Option<&[f64]>) -> Result<Sample> {
    let mut rng = Rng::new(seed, index as u64);
    let factors: Vec<f64> = spec.factors.iter().map(|f| rng.uniform_in(f.range.lo, f.range.hi)).collect();
    let label = match label_dist {
        Some(dist) => rng.categorical(dist),
        None => rng.below(spec.num_classes),
    };
    render(&factors, label, spec, sample_seed(seed, index))
}

/// Generates `n` samples with independent uniform factors.
///
/// Sample `k` depends only on `(spec, seed, k, label_dist)`, so any subset
/// of indices can be produced independently and in any order.
pub fn generate_dataset(spec: &DatasetSpec, n: usize, seed: u64, label_dist: Option<&[f64]>) -> Result<Vec<Sample>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::input("dataset size must be positive"));
    }
    if let Some(dist) = label_dist {
        validate_distribution(dist, spec.num_classes)?;
    }
    (0..n).map(|k| draw_sample(spec, seed, k, label_dist)).collect()
}

pub(crate) fn validate_distribution(dist: &[f64], k: usize) -> Result<()> {
    if dist.len() != k {
        return Err(Error::input(alloc::format!("label distribution has {} entries, expected {k}", dist.len())));
    }
    if dist.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::input("label distribution entries must be finite and non-negative"));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::input(alloc::format!("label distribution sums to {total}, expected 1")));
    }
    Ok(())
}

/// Empirical label distribution of a dataset over `k` classes.
pub fn label_distribution(samples: &[Sample], k: usize) -> Vec<f64> {
    let mut counts = vec![0f64; k];
    for s in samples {
        counts[s.label] += 1.0;
    }
    let n = samples.len().max(1) as f64;
    counts.iter().map(|c| c / n).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinPartition {
    pub factor_id: String,
    pub edges: Vec<f64>,
    pub assignment: Vec<usize>,
}

impl BinPartition {
    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_bins()];
        for &b in &self.assignment {
            counts[b] += 1;
        }
        counts
    }

    pub fn with_factor_id(mut self, id: impl Into<String>) -> Self {
        self.factor_id = id.into();
        self
    }
}

/// Equal-width binning over `range`.
///
/// Values equal to the upper edge land in the last bin; values outside the
/// range are clamped to the nearest bin.
pub fn bin_assign(values: &[f64], n_bins: usize, range: Interval) -> Result<BinPartition> {
    if values.is_empty() {
        return Err(Error::input("cannot bin an empty value vector"));
    }
    if n_bins < 2 {
        return Err(Error::input("need at least two bins"));
    }
    range.validate()?;
    let edges: Vec<f64> = (0..=n_bins).map(|k| range.lerp(k as f64 / n_bins as f64)).collect();
    let assignment = values
        .iter()
        .map(|&v| {
            if v.is_nan() {
                return Err(Error::input("cannot bin NaN"));
            }
            let pos = range.normalize(v) * n_bins as f64;
            Ok(if pos <= 0.0 { 0 } else { (libm::floor(pos) as usize).min(n_bins - 1) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BinPartition { factor_id: String::new(), edges, assignment })
}
