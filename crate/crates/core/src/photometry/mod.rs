//! Luminance, colour temperature and ambient-condition statistics.

mod ambient;
mod cct;
mod cmf;

use crate::context::ObservationMask;
use crate::envmap::{solid_angle_weights, EnvironmentMap, Rgb};
use crate::error::{Error, Result};

pub use self::ambient::{
    classify_ambient, measure, AmbientLabels, AmbientLightReading, IntensityLabel, TemperatureLabel,
    INTENSITY_BOUNDS, TEMPERATURE_BOUNDS_K,
};
pub use self::cct::{
    cct, cct_from_chromaticity, mccamy_cct, planck_chromaticity, rgb_to_xyz, CctEstimate, ChromaticityPoint,
    LOCUS_MAX_K, LOCUS_MIN_K, MAX_DUV,
};

/// Luminance weights of linear sRGB primaries (Y row of the RGB→XYZ matrix).
pub const LUMINANCE_COEFFS: [f64; 3] = [0.212671, 0.71516, 0.072169];

#[inline]
pub fn luminance(rgb: Rgb) -> f64 {
    LUMINANCE_COEFFS[0] * rgb[0] + LUMINANCE_COEFFS[1] * rgb[1] + LUMINANCE_COEFFS[2] * rgb[2]
}

/// Solid-angle weighted luminance summed over the whole sphere.
pub fn total_luminance(map: &EnvironmentMap) -> Result<f64> {
    let weights = solid_angle_weights(map.width(), map.height())?;
    let mut total = 0.0;
    for y in 0..map.height() {
        let row = &map.pixels()[y * map.width()..(y + 1) * map.width()];
        let sum: f64 = row.iter().map(|&p| luminance(p)).sum();
        total += sum * weights.row(y);
    }
    Ok(total)
}

/// Unweighted mean of per-pixel luminance, optionally restricted to a mask.
pub fn mean_pixel_intensity(map: &EnvironmentMap, mask: Option<&ObservationMask>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    visit(map, mask, |p| {
        sum += luminance(p);
        n += 1;
    })?;
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Mean linear RGB, optionally restricted to a mask.
pub fn mean_rgb(map: &EnvironmentMap, mask: Option<&ObservationMask>) -> Result<Rgb> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    visit(map, mask, |p| {
        for c in 0..3 {
            sum[c] += p[c];
        }
        n += 1;
    })?;
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum.map(|s| s / n as f64))
}

fn visit(map: &EnvironmentMap, mask: Option<&ObservationMask>, mut f: impl FnMut(Rgb)) -> Result<()> {
    match mask {
        None => map.pixels().iter().for_each(|&p| f(p)),
        Some(mask) => {
            map.ensure_same_dims(mask.dims())?;
            for (p, &on) in map.pixels().iter().zip(mask.bits()) {
                if on {
                    f(*p);
                }
            }
        }
    }
    Ok(())
}

/// Knobs for [`preprocess`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreprocessConfig {
    /// Raise values to `gamma` first (source stored gamma-encoded).
    pub gamma_decode: bool,
    pub gamma: f64,
    /// Luminance percentile pinned to `target`, in `(0, 1]`.
    pub percentile: f64,
    pub target: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            gamma_decode: false,
            gamma: 2.4,
            percentile: 0.99,
            target: 0.9,
        }
    }
}

/// Nearest-rank percentile (1-based rank `ceil(p · n)`).
pub fn percentile(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let rank = ((p * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let (_, v, _) = values.select_nth_unstable_by(rank - 1, f64::total_cmp);
    *v
}

/// Optional gamma decode followed by a global scale that pins the chosen
/// luminance percentile to the target value.
pub fn preprocess(map: &EnvironmentMap, config: &PreprocessConfig) -> Result<EnvironmentMap> {
    let decoded = if config.gamma_decode {
        let g = config.gamma;
        map.map_pixels(|p| p.map(|c| c.powf(g)))
    } else {
        map.clone()
    };
    let mut lum: Vec<f64> = decoded.pixels().iter().map(|&p| luminance(p)).collect();
    let level = percentile(&mut lum, config.percentile);
    if level <= 0.0 {
        return Err(Error::Degenerate(format!(
            "luminance percentile {} is zero; scale undefined",
            config.percentile
        )));
    }
    let scale = config.target / level;
    if scale == 1.0 {
        return Ok(decoded);
    }
    Ok(decoded.into_hdr().map_pixels(|p| p.map(|c| c * scale)))
}
