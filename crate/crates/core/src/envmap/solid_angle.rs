use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Per-texel solid angles of an equirectangular grid, one entry per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SolidAngleWeights {
    width: usize,
    rows: Vec<f64>,
}

impl SolidAngleWeights {
    /// Steradians covered by one texel of row `y`.
    #[inline]
    pub fn row(&self, y: usize) -> f64 {
        self.rows[y]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.rows.len()
    }

    /// Σ dω over every texel.
    pub fn total(&self) -> f64 {
        self.rows.iter().sum::<f64>() * self.width as f64
    }
}

/// Solid angle per texel for a `width x height` equirectangular map.
///
/// Each row is the exact latitude band `(2π / width) (cos θ_top − cos θ_bottom)`,
/// which equals `(2π / width) · 2 sin(Δθ / 2) · sin θ_y` for the polar angle
/// `θ_y` at the row centre. The bands tile the sphere, so the total is 4π up to
/// rounding at every resolution.
pub fn solid_angle_weights(width: usize, height: usize) -> Result<SolidAngleWeights> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    if width != 2 * height {
        return Err(Error::InvalidAspect { width, height });
    }
    let dphi = 2.0 * PI / width as f64;
    let dtheta = PI / height as f64;
    let chord = 2.0 * (0.5 * dtheta).sin();
    let rows = (0..height)
        .map(|y| {
            let theta = (y as f64 + 0.5) * dtheta;
            dphi * chord * theta.sin()
        })
        .collect();
    Ok(SolidAngleWeights { width, rows })
}
