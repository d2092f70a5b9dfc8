use crate::error::{Error, Result};

/// Number of scene classes.
pub const NUM_CLASSES: usize = 150;
/// Label for texels with no semantic information (outside the observation).
pub const UNLABELED: u8 = 255;

/// Per-texel class ids for an equirectangular map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl SemanticMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::InvalidDimensions { width, height });
        }
        if width != 2 * height {
            return Err(Error::InvalidAspect { width, height });
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= NUM_CLASSES && l != UNLABELED)
        {
            return Err(Error::InvalidValue {
                index: i,
                value: l as f64,
            });
        }
        Ok(Self {
            width,
            height,
            labels,
        })
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

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> Option<u8> {
        match self.labels[y * self.width + x] {
            UNLABELED => None,
            l => Some(l),
        }
    }

    /// Texel count per class.
    pub fn histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for &l in &self.labels {
            if l != UNLABELED {
                h[l as usize] += 1;
            }
        }
        h
    }

    /// Indexed PNG using [`palette`]; index 255 is unlabeled.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        crate::envmap::png::encode_indexed(self.width, self.height, &self.labels, &palette())
    }

    /// Reads an indexed or 8-bit grayscale PNG of raw class ids.
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let (w, h, labels) = crate::envmap::png::decode_indexed(bytes)?;
        Self::new(w, h, labels)
    }
}

/// 256-entry display palette. Class `i` gets the usual bit-interleaved
/// segmentation colormap colour; unused slots and 255 are black.
pub fn palette() -> Vec<[u8; 3]> {
    (0..256usize)
        .map(|i| {
            if i >= NUM_CLASSES {
                return [0; 3];
            }
            let mut c = [0u8; 3];
            let mut id = i;
            for shift in (0..8).rev() {
                for (ch, out) in c.iter_mut().enumerate() {
                    *out |= (((id >> ch) & 1) as u8) << shift;
                }
                id >>= 3;
            }
            c
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_is_distinct() {
        let p = palette();
        assert_eq!(p.len(), 256);
        assert_eq!(p[0], [0, 0, 0]);
        assert_eq!(p[1], [128, 0, 0]);
        assert_eq!(p[2], [0, 128, 0]);
        let set: std::collections::HashSet<_> = p[..NUM_CLASSES].iter().collect();
        assert_eq!(set.len(), NUM_CLASSES);
    }

    #[test]
    fn png_round_trip() {
        let labels: Vec<u8> = (0..32 * 16)
            .map(|i| if i % 7 == 0 { UNLABELED } else { (i % 150) as u8 })
            .collect();
        let m = SemanticMap::new(32, 16, labels).unwrap();
        let back = SemanticMap::from_png(&m.to_png().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get(0, 0), None);
        assert_eq!(back.get(1, 0), Some(1));
        assert_eq!(
            m.histogram().iter().sum::<usize>(),
            32 * 16 - (32 * 16usize).div_ceil(7)
        );
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(matches!(
            SemanticMap::new(4, 2, vec![0, 1, 2, 150, 0, 0, 0, 0]),
            Err(Error::InvalidValue { index: 3, .. })
        ));
        assert!(SemanticMap::new(4, 4, vec![0; 16]).is_err());
    }
}
