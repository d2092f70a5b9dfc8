use super::SphereImage;
use crate::envmap::{EnvironmentMap, Range, Rgb};
use crate::error::{Error, Result};
use crate::photometry::percentile;

/// Percentiles mapped to 0 and 1 before RMSE.
pub const REMAP_PERCENTILES: (f64, f64) = (0.001, 0.999);
const NORM_FLOOR: f64 = 1e-8;

fn check_pair(a: &SphereImage, b: &SphereImage) -> Result<()> {
    if a.resolution != b.resolution || a.covered != b.covered {
        return Err(Error::DimensionMismatch {
            expected: (b.resolution, b.resolution),
            found: (a.resolution, a.resolution),
        });
    }
    if a.covered_count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// Affine remap sending the low/high percentiles of the covered values
/// (channels pooled) to 0 and 1, clamped.
fn remap(img: &SphereImage) -> Result<Vec<f64>> {
    let values: Vec<f64> = img.covered_pixels().flatten().copied().collect();
    let mut scratch = values.clone();
    let lo = percentile(&mut scratch, REMAP_PERCENTILES.0);
    let hi = percentile(&mut scratch, REMAP_PERCENTILES.1);
    let spread = hi - lo;
    if spread.is_nan() || spread <= 1e-9 * hi.abs().max(lo.abs()) {
        return Err(Error::Degenerate(format!(
            "percentile spread is zero (both at {lo})"
        )));
    }
    Ok(values
        .into_iter()
        .map(|v| ((v - lo) / spread).clamp(0.0, 1.0))
        .collect())
}

/// RMSE after independent percentile normalisation of both images.
pub fn rmse(pred: &SphereImage, gt: &SphereImage) -> Result<f64> {
    check_pair(pred, gt)?;
    let a = remap(pred)?;
    let b = remap(gt)?;
    let sum: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Scale-invariant RMSE with the optimal non-negative global scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleInvariant {
    pub value: f64,
    /// `None` when the prediction is all zero and no scale is defined.
    pub alpha: Option<f64>,
}

pub fn si_rmse_detailed(pred: &SphereImage, gt: &SphereImage) -> Result<ScaleInvariant> {
    check_pair(pred, gt)?;
    let (mut pg, mut pp, mut gg) = (0.0, 0.0, 0.0);
    let mut n = 0usize;
    for (p, g) in pred.covered_pixels().zip(gt.covered_pixels()) {
        for c in 0..3 {
            pg += p[c] * g[c];
            pp += p[c] * p[c];
            gg += g[c] * g[c];
        }
        n += 3;
    }
    if pp == 0.0 {
        log::warn!("si-RMSE of an all-zero prediction; scale undefined");
        return Ok(ScaleInvariant {
            value: (gg / n as f64).sqrt(),
            alpha: None,
        });
    }
    let alpha = (pg / pp).max(0.0);
    let sum: f64 = pred
        .covered_pixels()
        .zip(gt.covered_pixels())
        .flat_map(|(p, g)| (0..3).map(move |c| (alpha * p[c] - g[c]).powi(2)))
        .sum();
    Ok(ScaleInvariant {
        value: (sum / n as f64).sqrt(),
        alpha: Some(alpha),
    })
}

/// Scale-invariant RMSE. Not symmetric: only the prediction is rescaled.
pub fn si_rmse(pred: &SphereImage, gt: &SphereImage) -> Result<f64> {
    Ok(si_rmse_detailed(pred, gt)?.value)
}

fn angle_deg(p: &Rgb, g: &Rgb) -> f64 {
    let np = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let ng = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    if np < NORM_FLOOR || ng < NORM_FLOOR {
        return 0.0;
    }
    let cos = (p[0] * g[0] + p[1] * g[1] + p[2] * g[2]) / (np * ng);
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Mean per-pixel angle between RGB vectors, in degrees.
pub fn angular_error(pred: &SphereImage, gt: &SphereImage) -> Result<f64> {
    check_pair(pred, gt)?;
    let n = pred.covered_count() as f64;
    Ok(pred
        .covered_pixels()
        .zip(gt.covered_pixels())
        .map(|(p, g)| angle_deg(p, g))
        .sum::<f64>()
        / n)
}

/// Plain RMS difference of two LDR maps.
pub fn ldr_rmse(pred: &EnvironmentMap, gt: &EnvironmentMap) -> Result<f64> {
    pred.ensure_same_dims(gt.dims())?;
    for m in [pred, gt] {
        if m.is_hdr() && m.max_value() > 1.0 {
            return Err(Error::WrongRange {
                expected: Range::Ldr.name(),
            });
        }
    }
    let sum: f64 = pred
        .pixels()
        .iter()
        .zip(gt.pixels())
        .flat_map(|(p, g)| (0..3).map(move |c| (p[c] - g[c]).powi(2)))
        .sum();
    Ok((sum / (3 * pred.pixels().len()) as f64).sqrt())
}
