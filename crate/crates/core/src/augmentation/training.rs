use crate::context::{build_prompt_p2, PromptText};
use crate::envmap::{decompose, EnvironmentMap, HighIntensityMap};
use crate::error::Result;

/// LDR map, grayscale high-intensity target and prompt for one HDR source.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub ldr: EnvironmentMap,
    /// Luminance of the per-channel high-intensity map, row-major.
    pub hi_gray: Vec<f64>,
    pub prompt: PromptText,
}

impl TrainingPair {
    /// The grayscale target as a three-channel map, for saving.
    pub fn hi_gray_map(&self) -> Result<HighIntensityMap> {
        HighIntensityMap::from_grayscale(self.ldr.width(), self.ldr.height(), &self.hi_gray)
    }
}

pub fn make_training_pair(hdr: &EnvironmentMap) -> Result<TrainingPair> {
    let (ldr, hi) = decompose(hdr)?;
    Ok(TrainingPair {
        ldr,
        hi_gray: hi.to_grayscale(),
        prompt: build_prompt_p2(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envmap::Range;

    #[test]
    fn examples() {
        let ldr = EnvironmentMap::uniform(16, 8, [0.7; 3], Range::Hdr).unwrap();
        let p = make_training_pair(&ldr).unwrap();
        assert!(p.hi_gray.iter().all(|&v| v == 0.0));
        assert_eq!(p.prompt, build_prompt_p2());

        let v = 1.0 + 3f64.ln();
        let lamp = EnvironmentMap::from_fn(16, 8, Range::Hdr, |x, y| {
            if (x, y) == (5, 2) {
                [v; 3]
            } else {
                [0.3; 3]
            }
        })
        .unwrap();
        let p = make_training_pair(&lamp).unwrap();
        for (i, &g) in p.hi_gray.iter().enumerate() {
            if i == 2 * 16 + 5 {
                assert!((g - 0.5).abs() < 1e-12);
            } else {
                assert_eq!(g, 0.0);
            }
        }
        assert_eq!(p.hi_gray_map().unwrap().dims(), (16, 8));
    }
}
