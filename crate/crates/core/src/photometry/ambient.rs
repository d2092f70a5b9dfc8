use std::fmt;

use serde::{Deserialize, Serialize};

use super::{cct, mean_pixel_intensity, mean_rgb, total_luminance};
use crate::context::ObservationMask;
use crate::envmap::EnvironmentMap;
use crate::error::Result;

/// Closed neutral band for mean pixel intensity.
pub const INTENSITY_BOUNDS: (f64, f64) = (0.25, 0.40);
/// Closed neutral band for colour temperature, Kelvin.
pub const TEMPERATURE_BOUNDS_K: (f64, f64) = (3500.0, 5500.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbientLightReading {
    /// Mean per-pixel luminance of the (LDR) observation, in `[0, 1]`.
    pub mean_intensity: f64,
    /// Solid-angle weighted luminance of the whole map.
    pub total_luminance: f64,
    pub cct_kelvin: f64,
    /// Set when the CCT is outside the tabulated locus or too far from it.
    #[serde(default)]
    pub cct_out_of_locus: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityLabel {
    Dark,
    Neutral,
    Bright,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemperatureLabel {
    Warm,
    Neutral,
    Cool,
}

impl IntensityLabel {
    pub const ALL: [IntensityLabel; 3] = [Self::Dark, Self::Neutral, Self::Bright];

    pub fn word(self) -> &'static str {
        match self {
            Self::Dark => "dark",
            Self::Neutral => "neutral",
            Self::Bright => "bright",
        }
    }
}

impl TemperatureLabel {
    pub const ALL: [TemperatureLabel; 3] = [Self::Warm, Self::Neutral, Self::Cool];

    pub fn word(self) -> &'static str {
        match self {
            Self::Warm => "warm",
            Self::Neutral => "neutral",
            Self::Cool => "cool",
        }
    }
}

impl fmt::Display for IntensityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

impl fmt::Display for TemperatureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AmbientLabels {
    pub intensity: IntensityLabel,
    pub temperature: TemperatureLabel,
}

/// Thresholds the reading into labels. Band edges belong to `neutral`.
pub fn classify_ambient(reading: &AmbientLightReading) -> AmbientLabels {
    let (lo, hi) = INTENSITY_BOUNDS;
    let intensity = if reading.mean_intensity < lo {
        IntensityLabel::Dark
    } else if reading.mean_intensity > hi {
        IntensityLabel::Bright
    } else {
        IntensityLabel::Neutral
    };
    let (warm, cool) = TEMPERATURE_BOUNDS_K;
    let temperature = if reading.cct_kelvin < warm {
        TemperatureLabel::Warm
    } else if reading.cct_kelvin > cool {
        TemperatureLabel::Cool
    } else {
        TemperatureLabel::Neutral
    };
    AmbientLabels {
        intensity,
        temperature,
    }
}

/// Measures a map: mean intensity and CCT over the mask (whole map if
/// `None`), total luminance over the full sphere. The mean intensity is taken
/// on LDR-clamped values.
pub fn measure(map: &EnvironmentMap, mask: Option<&ObservationMask>) -> Result<AmbientLightReading> {
    let ldr = if map.is_hdr() { map.to_ldr() } else { map.clone() };
    let mean_intensity = mean_pixel_intensity(&ldr, mask)?;
    let total_luminance = total_luminance(map)?;
    let estimate = cct(mean_rgb(map, mask)?)?;
    Ok(AmbientLightReading {
        mean_intensity,
        total_luminance,
        cct_kelvin: estimate.kelvin,
        cct_out_of_locus: !estimate.in_locus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reading(mean: f64, kelvin: f64) -> AmbientLightReading {
        AmbientLightReading {
            mean_intensity: mean,
            total_luminance: 1.0,
            cct_kelvin: kelvin,
            cct_out_of_locus: false,
        }
    }

    fn labels(mean: f64, kelvin: f64) -> (IntensityLabel, TemperatureLabel) {
        let l = classify_ambient(&reading(mean, kelvin));
        (l.intensity, l.temperature)
    }

    #[test]
    fn documented_examples() {
        use IntensityLabel as I;
        use TemperatureLabel as T;
        assert_eq!(labels(0.30, 4000.0), (I::Neutral, T::Neutral));
        assert_eq!(labels(0.10, 3000.0), (I::Dark, T::Warm));
        assert_eq!(labels(0.55, 7000.0), (I::Bright, T::Cool));
    }

    #[test]
    fn boundaries_are_neutral() {
        use IntensityLabel as I;
        use TemperatureLabel as T;
        assert_eq!(labels(0.25, 3500.0), (I::Neutral, T::Neutral));
        assert_eq!(labels(0.40, 5500.0), (I::Neutral, T::Neutral));
        assert_eq!(labels(0.2499999, 3499.999), (I::Dark, T::Warm));
        assert_eq!(labels(0.4000001, 5500.001), (I::Bright, T::Cool));
    }

    #[test]
    fn measure_white() {
        use crate::envmap::Range;
        let m = EnvironmentMap::uniform(64, 32, [0.3; 3], Range::Ldr).unwrap();
        let r = measure(&m, None).unwrap();
        assert!((r.mean_intensity - 0.3).abs() < 1e-12);
        assert!((r.cct_kelvin - 6504.0).abs() < 60.0);
        assert!(!r.cct_out_of_locus);
    }
}
