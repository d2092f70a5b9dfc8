use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envmap::{EnvironmentMap, Rgb};
use crate::error::{Error, Result};

/// Admissible range of the scaling term.
pub const SCALE_RANGE: (f64, f64) = (0.25, 4.0);
pub const GRID_STEP: f64 = 0.125;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentationKind {
    Intensity,
    Temperature,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 2] = [Self::Intensity, Self::Temperature];

    pub fn name(self) -> &'static str {
        match self {
            Self::Intensity => "intensity",
            Self::Temperature => "temperature",
        }
    }
}

impl fmt::Display for AugmentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One lighting edit: kind and scaling term `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    pub s: f64,
}

impl AugmentationSpec {
    pub fn new(kind: AugmentationKind, s: f64) -> Result<Self> {
        if !(SCALE_RANGE.0..=SCALE_RANGE.1).contains(&s) {
            return Err(Error::InvalidParameter(format!(
                "scaling term {s} outside [{}, {}]",
                SCALE_RANGE.0, SCALE_RANGE.1
            )));
        }
        Ok(Self { kind, s })
    }

    pub fn apply(&self, map: &EnvironmentMap) -> Result<Edited> {
        match self.kind {
            AugmentationKind::Intensity => scale_intensity(map, self.s),
            AugmentationKind::Temperature => shift_temperature(map, self.s),
        }
    }

    /// Short stable tag for file names, e.g. `intensity_1.375`.
    pub fn tag(&self) -> String {
        format!("{}_{:.3}", self.kind, self.s)
    }
}

/// An edited map and the share of channel values clipped to 1 (LDR only).
#[derive(Clone, Debug, PartialEq)]
pub struct Edited {
    pub map: EnvironmentMap,
    pub clipped_fraction: f64,
}

fn edit(map: &EnvironmentMap, gains: Rgb) -> Edited {
    let mut clipped = 0usize;
    let ldr = !map.is_hdr();
    let out = map.map_pixels(|p| {
        let q = [p[0] * gains[0], p[1] * gains[1], p[2] * gains[2]];
        if ldr {
            clipped += q.iter().filter(|&&v| v > 1.0).count();
        }
        q
    });
    Edited {
        map: out,
        clipped_fraction: clipped as f64 / (3 * map.pixels().len()) as f64,
    }
}

fn check_scale(s: f64) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scaling term must be positive, got {s}"
        )));
    }
    Ok(())
}

/// Multiplies all three channels by `s`.
pub fn scale_intensity(map: &EnvironmentMap, s: f64) -> Result<Edited> {
    check_scale(s)?;
    Ok(edit(map, [s; 3]))
}

/// Scales red by `s` and blue by `1/s`; green is untouched.
pub fn shift_temperature(map: &EnvironmentMap, s: f64) -> Result<Edited> {
    check_scale(s)?;
    Ok(edit(map, [s, 1.0, 1.0 / s]))
}

/// `{0.25, 0.375, …, 4.0}`.
pub fn default_grid() -> Vec<f64> {
    let n = ((SCALE_RANGE.1 - SCALE_RANGE.0) / GRID_STEP).round() as usize;
    (0..=n).map(|i| SCALE_RANGE.0 + i as f64 * GRID_STEP).collect()
}

/// One intensity and one temperature variant per grid value.
pub fn generate_variants(
    map: &EnvironmentMap,
    grid: &[f64],
) -> Result<Vec<(AugmentationSpec, EnvironmentMap)>> {
    let mut out = Vec::with_capacity(2 * grid.len());
    for kind in AugmentationKind::ALL {
        for &s in grid {
            let spec = AugmentationSpec::new(kind, s)?;
            out.push((spec, spec.apply(map)?.map));
        }
    }
    Ok(out)
}

/// Cyclic horizontal rotation by a seeded uniform column shift.
pub fn random_rotation(map: &EnvironmentMap, seed: u64) -> (EnvironmentMap, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = rng.gen_range(0..map.width());
    (map.rotate_columns(shift as isize), shift)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::envmap::Range;
    use crate::photometry::{cct, mean_rgb, total_luminance};

    fn scene() -> EnvironmentMap {
        EnvironmentMap::from_fn(64, 32, Range::Hdr, |x, y| {
            [
                0.2 + (x % 5) as f64 * 0.3,
                0.1 + (y % 3) as f64 * 0.2,
                0.4 + ((x + y) % 4) as f64,
            ]
        })
        .unwrap()
    }

    #[test]
    fn identity_at_one() {
        let m = scene();
        assert_eq!(scale_intensity(&m, 1.0).unwrap().map, m);
        assert_eq!(shift_temperature(&m, 1.0).unwrap().map, m);
    }

    #[test]
    fn intensity_scales_total_luminance() {
        let m = scene();
        let base = total_luminance(&m).unwrap();
        for s in [2.0, 0.25] {
            let l = total_luminance(&scale_intensity(&m, s).unwrap().map).unwrap();
            assert!((l - s * base).abs() <= 1e-12 * s * base);
        }
    }

    #[test]
    fn ldr_clipping_reported() {
        let m = EnvironmentMap::from_fn(8, 4, Range::Ldr, |x, _| [if x < 4 { 0.8 } else { 0.2 }; 3]).unwrap();
        let e = scale_intensity(&m, 2.0).unwrap();
        assert!((e.clipped_fraction - 0.5).abs() < 1e-12);
        assert!(e.map.pixels().iter().all(|p| p[0] <= 1.0));
        assert_eq!(scale_intensity(&m, 1.0).unwrap().clipped_fraction, 0.0);
    }

    #[test]
    fn warmer_with_larger_s() {
        let white = EnvironmentMap::uniform(16, 8, [0.5; 3], Range::Hdr).unwrap();
        let before = cct(mean_rgb(&white, None).unwrap()).unwrap().kelvin;
        let warm = shift_temperature(&white, 2.0).unwrap().map;
        let after = cct(mean_rgb(&warm, None).unwrap()).unwrap().kelvin;
        assert!(after < before, "{after} vs {before}");
    }

    #[test]
    fn grid_and_variants() {
        let g = default_grid();
        assert_eq!(g.len(), 31);
        assert_eq!(g[0], 0.25);
        assert_eq!(*g.last().unwrap(), 4.0);
        let m = scene();
        assert_eq!(generate_variants(&m, &g).unwrap().len(), 62);
        let ident = generate_variants(&m, &[1.0]).unwrap();
        assert_eq!(ident.len(), 2);
        assert!(ident.iter().all(|(_, v)| *v == m));
        assert!(generate_variants(&m, &[]).unwrap().is_empty());
        assert!(generate_variants(&m, &[5.0]).is_err());
    }

    #[test]
    fn rotation_is_seeded() {
        let m = scene();
        let (a, sa) = random_rotation(&m, 9);
        let (b, sb) = random_rotation(&m, 9);
        assert_eq!((a.clone(), sa), (b, sb));
        assert_eq!(a.rotate_columns(-(sa as isize)), m);
    }

    proptest! {
        #[test]
        fn reciprocal_shift_is_identity(s in 0.25f64..4.0) {
            let m = scene();
            let back = shift_temperature(&shift_temperature(&m, s).unwrap().map, 1.0 / s).unwrap().map;
            for (p, q) in back.pixels().iter().zip(m.pixels()) {
                for c in 0..3 {
                    prop_assert!((p[c] - q[c]).abs() <= 1e-7);
                }
            }
        }

        #[test]
        fn cct_non_increasing_in_s(
            base in proptest::array::uniform3(0.3f64..0.7),
        ) {
            let m = EnvironmentMap::uniform(8, 4, base, Range::Hdr).unwrap();
            let mut prev = f64::INFINITY;
            for s in default_grid() {
                let e = cct(mean_rgb(&shift_temperature(&m, s).unwrap().map, None).unwrap()).unwrap();
                if !e.in_locus {
                    // Only monotone while the chromaticity stays near the locus.
                    prev = f64::INFINITY;
                    continue;
                }
                prop_assert!(e.kelvin <= prev + 1e-9, "s={s}: {} > {prev}", e.kelvin);
                prev = e.kelvin;
            }
        }
    }
}
