//! Equirectangular environment maps and the HDR ↔ (LDR, high-intensity) split.
//!
//! Maps are stored row-major in linear RGB with one `[f64; 3]` per texel.
//! Row 0 is the top pole (pitch +90°) and column 0 sits at yaw −180°; texel
//! centres are at half-integer offsets. See [`geometry`] for the direction
//! conventions shared by masking, stitching and sphere rendering.

pub mod geometry;
pub mod png;
pub mod rgbe;
mod solid_angle;
mod transform;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::png::{load_ldr, save_ldr, Transfer};
pub use self::rgbe::{load_hdr, load_hdr_with_policy, save_hdr};
pub use self::solid_angle::{solid_angle_weights, SolidAngleWeights};
pub use self::transform::{
    decompose, recompose, recompose_grayscale, sigmoid_map, sigmoid_unmap, Compressed, SATURATION_CLAMP,
};

/// Linear RGB triple.
pub type Rgb = [f64; 3];

/// Dynamic-range tag carried by every map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Range {
    /// All channels in `[0, 1]`.
    Ldr,
    /// Unbounded non-negative radiance.
    Hdr,
}

impl Range {
    pub(crate) fn name(self) -> &'static str {
        match self {
            Range::Ldr => "LDR",
            Range::Hdr => "HDR",
        }
    }
}

/// Whether a constructor insists on the 2:1 equirectangular aspect.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AspectPolicy {
    #[default]
    Strict,
    /// Accept any aspect, logging a warning when it is not 2:1.
    Lenient,
}

/// An equirectangular radiance image.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
    range: Range,
}

impl EnvironmentMap {
    /// Validating constructor for a 2:1 map.
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>, range: Range) -> Result<Self> {
        Self::with_policy(width, height, pixels, range, AspectPolicy::Strict)
    }

    pub fn with_policy(
        width: usize,
        height: usize,
        pixels: Vec<Rgb>,
        range: Range,
        policy: AspectPolicy,
    ) -> Result<Self> {
        check_dims(width, height, policy)?;
        if pixels.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        validate_pixels(&pixels, range)?;
        Ok(Self {
            width,
            height,
            pixels,
            range,
        })
    }

    /// Builds a map by evaluating `f(x, y)` at every texel.
    pub fn from_fn(
        width: usize,
        height: usize,
        range: Range,
        mut f: impl FnMut(usize, usize) -> Rgb,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels, range)
    }

    pub fn uniform(width: usize, height: usize, rgb: Rgb, range: Range) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height], range)
    }

    /// Internal constructor for results whose invariants already hold.
    pub(crate) fn from_parts(width: usize, height: usize, pixels: Vec<Rgb>, range: Range) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        Self {
            width,
            height,
            pixels,
            range,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn range(&self) -> Range {
        self.range
    }

    pub fn is_hdr(&self) -> bool {
        self.range == Range::Hdr
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<Rgb> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    /// Largest channel value in the map.
    pub fn max_value(&self) -> f64 {
        self.pixels
            .iter()
            .flat_map(|p| p.iter().copied())
            .fold(0.0, f64::max)
    }

    /// Applies `f` to every texel, clamping to `[0, 1]` when the map is LDR.
    pub fn map_pixels(&self, mut f: impl FnMut(Rgb) -> Rgb) -> Self {
        let clamp = self.range == Range::Ldr;
        let pixels = self
            .pixels
            .iter()
            .map(|&p| {
                let mut q = f(p);
                for c in &mut q {
                    *c = if clamp { c.clamp(0.0, 1.0) } else { c.max(0.0) };
                }
                q
            })
            .collect();
        Self::from_parts(self.width, self.height, pixels, self.range)
    }

    /// Retags the map as HDR; values are unchanged.
    pub fn into_hdr(mut self) -> Self {
        self.range = Range::Hdr;
        self
    }

    /// Clamps to `[0, 1]` and tags the result LDR.
    pub fn to_ldr(&self) -> Self {
        let pixels = self.pixels.iter().map(|p| p.map(|c| c.clamp(0.0, 1.0))).collect();
        Self::from_parts(self.width, self.height, pixels, Range::Ldr)
    }

    pub(crate) fn ensure_same_dims(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other,
            });
        }
        Ok(())
    }

    /// Bilinear resample in linear RGB. Columns wrap around, rows clamp.
    pub fn resize(&self, new_width: usize, new_height: usize) -> Result<Self> {
        self.resize_with_policy(new_width, new_height, AspectPolicy::Strict)
    }

    pub fn resize_with_policy(
        &self,
        new_width: usize,
        new_height: usize,
        policy: AspectPolicy,
    ) -> Result<Self> {
        check_dims(new_width, new_height, policy)?;
        if (new_width, new_height) == self.dims() {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / new_width as f64;
        let sy = self.height as f64 / new_height as f64;
        let mut pixels = Vec::with_capacity(new_width * new_height);
        for y in 0..new_height {
            let v = (y as f64 + 0.5) * sy - 0.5;
            for x in 0..new_width {
                let u = (x as f64 + 0.5) * sx - 0.5;
                pixels.push(self.sample_texel_space(u, v));
            }
        }
        Ok(Self::from_parts(new_width, new_height, pixels, self.range))
    }

    /// Bilinear lookup at continuous texel coordinates, where texel `(i, j)`
    /// has its centre at `(i, j)`. Wraps horizontally, clamps vertically.
    pub fn sample_texel_space(&self, u: f64, v: f64) -> Rgb {
        let w = self.width as isize;
        let h = self.height as isize;
        let x0 = u.floor();
        let y0 = v.floor();
        let fx = u - x0;
        let fy = v - y0;
        let x0 = x0 as isize;
        let y0 = y0 as isize;
        let wrap = |x: isize| x.rem_euclid(w) as usize;
        let clampy = |y: isize| y.clamp(0, h - 1) as usize;
        let (xa, xb) = (wrap(x0), wrap(x0 + 1));
        let (ya, yb) = (clampy(y0), clampy(y0 + 1));
        let p00 = self.get(xa, ya);
        let p10 = self.get(xb, ya);
        let p01 = self.get(xa, yb);
        let p11 = self.get(xb, yb);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] + (p10[c] - p00[c]) * fx;
            let bottom = p01[c] + (p11[c] - p01[c]) * fx;
            out[c] = top + (bottom - top) * fy;
        }
        out
    }

    /// Cyclic horizontal shift by `columns` (a rotation about the vertical axis).
    pub fn rotate_columns(&self, columns: isize) -> Self {
        let w = self.width as isize;
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            let row = &self.pixels[y * self.width..(y + 1) * self.width];
            for x in 0..w {
                pixels.push(row[(x - columns).rem_euclid(w) as usize]);
            }
        }
        Self::from_parts(self.width, self.height, pixels, self.range)
    }
}

/// Sigmoid-compressed radiance above the LDR ceiling, per channel.
///
/// Values live in `[0, 1]`. Decomposition never produces 1.0; a stored 1.0
/// can only come from a quantized image and is treated as saturated.
#[derive(Clone, Debug, PartialEq)]
pub struct HighIntensityMap {
    width: usize,
    height: usize,
    values: Vec<Rgb>,
}

impl HighIntensityMap {
    pub fn new(width: usize, height: usize, values: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::InvalidDimensions { width, height });
        }
        for (index, v) in values.iter().flatten().enumerate() {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::InvalidValue {
                    index: index / 3,
                    value: *v,
                });
            }
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![[0.0; 3]; width * height],
        }
    }

    pub(crate) fn from_parts(width: usize, height: usize, values: Vec<Rgb>) -> Self {
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[Rgb] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.values[y * self.width + x]
    }

    /// Single-channel view: luminance of the per-channel values.
    pub fn to_grayscale(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|&v| crate::photometry::luminance(v))
            .collect()
    }

    /// Builds a per-channel map from a grayscale one by replicating the channel.
    pub fn from_grayscale(width: usize, height: usize, gray: &[f64]) -> Result<Self> {
        Self::new(width, height, gray.iter().map(|&g| [g; 3]).collect())
    }

    pub fn resize(&self, new_width: usize, new_height: usize) -> Result<Self> {
        let as_map = EnvironmentMap::from_parts(self.width, self.height, self.values.clone(), Range::Ldr);
        let resized = as_map.resize_with_policy(new_width, new_height, AspectPolicy::Lenient)?;
        Ok(Self::from_parts(new_width, new_height, resized.into_pixels()))
    }
}

fn check_dims(width: usize, height: usize, policy: AspectPolicy) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    if width != 2 * height {
        match policy {
            AspectPolicy::Strict => return Err(Error::InvalidAspect { width, height }),
            AspectPolicy::Lenient => {
                log::warn!("map is {width}x{height}, not the 2:1 equirectangular aspect")
            }
        }
    }
    Ok(())
}

fn validate_pixels(pixels: &[Rgb], range: Range) -> Result<()> {
    let ceiling = match range {
        Range::Ldr => 1.0,
        Range::Hdr => f64::INFINITY,
    };
    for (index, p) in pixels.iter().enumerate() {
        for &value in p {
            if !value.is_finite() || value < 0.0 || value > ceiling {
                return Err(Error::InvalidValue { index, value });
            }
        }
    }
    Ok(())
}
