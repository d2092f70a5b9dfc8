use serde::{Deserialize, Serialize};

use crate::envmap::{solid_angle_weights, EnvironmentMap};
use crate::error::{Error, Result};

/// Which equirectangular texels a device has observed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl ObservationMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::InvalidDimensions { width, height });
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub(crate) fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Observed share of the sphere, weighting texels by solid angle. Falls
    /// back to the plain texel fraction for non-2:1 grids.
    pub fn coverage_fraction(&self) -> f64 {
        match solid_angle_weights(self.width, self.height) {
            Ok(w) => {
                let mut total = 0.0;
                for y in 0..self.height {
                    let n = self.bits[y * self.width..(y + 1) * self.width]
                        .iter()
                        .filter(|&&b| b)
                        .count();
                    total += n as f64 * w.row(y);
                }
                total / w.total()
            }
            Err(_) => self.count() as f64 / self.bits.len() as f64,
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        crate::envmap::png::encode_mask_bits(self.width, self.height, &self.bits)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let (w, h, bits) = crate::envmap::png::decode_mask_bits(bytes)?;
        Self::new(w, h, bits)
    }
}

/// Pixelwise OR of equally sized masks.
pub fn compose_masks(masks: &[ObservationMask]) -> Result<ObservationMask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidParameter("no masks to compose".into()))?;
    let mut out = first.clone();
    for m in &masks[1..] {
        if m.dims() != out.dims() {
            return Err(Error::DimensionMismatch {
                expected: out.dims(),
                found: m.dims(),
            });
        }
        for (o, &b) in out.bits.iter_mut().zip(&m.bits) {
            *o |= b;
        }
    }
    Ok(out)
}

/// Blacks out unobserved texels. The mask must travel with the result so
/// observed black can be told apart from unobserved.
pub fn apply_mask(map: &EnvironmentMap, mask: &ObservationMask) -> Result<EnvironmentMap> {
    map.ensure_same_dims(mask.dims())?;
    let pixels = map
        .pixels()
        .iter()
        .zip(&mask.bits)
        .map(|(&p, &on)| if on { p } else { [0.0; 3] })
        .collect();
    Ok(EnvironmentMap::from_parts(
        map.width(),
        map.height(),
        pixels,
        map.range(),
    ))
}
