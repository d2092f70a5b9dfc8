//! Correlated colour temperature by search along a tabulated Planckian locus
//! with Ohno's triangular/parabolic refinement.
//!
//! The locus table covers 1000 K to 25000 K in 1% geometric steps. Each entry
//! is the CIE 1960 `(u, v)` of a blackbody integrated against the CIE 1931
//! 2° colour matching functions.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::cmf::{CIE1931_XYZ_BAR, CMF_START_NM, CMF_STEP_NM};
use crate::envmap::Rgb;
use crate::error::{Error, Result};

pub const LOCUS_MIN_K: f64 = 1000.0;
pub const LOCUS_MAX_K: f64 = 25000.0;
/// Chromaticities farther than this from the locus are flagged.
pub const MAX_DUV: f64 = 0.05;

const STEP: f64 = 1.01;
/// Second radiation constant, m·K.
const C2: f64 = 1.4388e-2;

/// Linear sRGB (D65) to CIE XYZ.
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

pub fn rgb_to_xyz(rgb: Rgb) -> [f64; 3] {
    let m = &SRGB_TO_XYZ;
    [
        m[0][0] * rgb[0] + m[0][1] * rgb[1] + m[0][2] * rgb[2],
        m[1][0] * rgb[0] + m[1][1] * rgb[1] + m[1][2] * rgb[2],
        m[2][0] * rgb[0] + m[2][1] * rgb[1] + m[2][2] * rgb[2],
    ]
}

/// CIE 1931 `(x, y)` together with CIE 1960 `(u, v)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChromaticityPoint {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
}

impl ChromaticityPoint {
    pub fn from_xy(x: f64, y: f64) -> Result<Self> {
        if !(x > 0.0 && y > 0.0 && x + y < 1.0) {
            return Err(Error::Domain(x));
        }
        let d = -2.0 * x + 12.0 * y + 3.0;
        Ok(Self {
            x,
            y,
            u: 4.0 * x / d,
            v: 6.0 * y / d,
        })
    }

    pub fn from_xyz(xyz: [f64; 3]) -> Result<Self> {
        let s = xyz[0] + xyz[1] + xyz[2];
        if s <= 0.0 {
            return Err(Error::Degenerate("black stimulus has no chromaticity".into()));
        }
        Self::from_xy(xyz[0] / s, xyz[1] / s)
    }

    /// CIE 1976 `u'`.
    pub fn u_prime(&self) -> f64 {
        self.u
    }

    /// CIE 1976 `v'`.
    pub fn v_prime(&self) -> f64 {
        1.5 * self.v
    }
}

/// Result of a CCT search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CctEstimate {
    pub kelvin: f64,
    /// Signed distance from the locus in CIE 1960 uv (positive above).
    pub duv: f64,
    /// False when `|duv|` exceeds [`MAX_DUV`] or the nearest locus point is
    /// the table end; `kelvin` is then the nearest table temperature.
    pub in_locus: bool,
}

struct LocusEntry {
    kelvin: f64,
    u: f64,
    v: f64,
}

fn blackbody_uv(kelvin: f64) -> (f64, f64) {
    let mut xyz = [0.0; 3];
    for (i, bar) in CIE1931_XYZ_BAR.iter().enumerate() {
        let lambda = (CMF_START_NM + CMF_STEP_NM * i as f64) * 1e-9;
        let m = lambda.powi(-5) / ((C2 / (lambda * kelvin)).exp_m1());
        for c in 0..3 {
            xyz[c] += m * bar[c];
        }
    }
    let d = xyz[0] + 15.0 * xyz[1] + 3.0 * xyz[2];
    (4.0 * xyz[0] / d, 6.0 * xyz[1] / d)
}

fn locus() -> &'static [LocusEntry] {
    static TABLE: OnceLock<Vec<LocusEntry>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut out = Vec::new();
        let mut t = LOCUS_MIN_K;
        loop {
            let (u, v) = blackbody_uv(t);
            out.push(LocusEntry { kelvin: t, u, v });
            if t >= LOCUS_MAX_K {
                break;
            }
            t = (t * STEP).min(LOCUS_MAX_K);
        }
        out
    })
}

/// CIE 1960 chromaticity of a blackbody radiator.
pub fn planck_chromaticity(kelvin: f64) -> ChromaticityPoint {
    let (u, v) = blackbody_uv(kelvin);
    let d = 2.0 * u - 8.0 * v + 4.0;
    ChromaticityPoint {
        x: 3.0 * u / d,
        y: 2.0 * v / d,
        u,
        v,
    }
}

/// CCT of a chromaticity.
pub fn cct_from_chromaticity(p: &ChromaticityPoint) -> CctEstimate {
    let table = locus();
    let dist = |e: &LocusEntry| ((p.u - e.u).powi(2) + (p.v - e.v).powi(2)).sqrt();
    let (m, _) = table
        .iter()
        .enumerate()
        .map(|(i, e)| (i, dist(e)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("locus table is non-empty");

    if m == 0 || m == table.len() - 1 {
        let e = &table[m];
        let duv = dist(e).copysign(p.v - e.v);
        return CctEstimate {
            kelvin: e.kelvin,
            duv,
            in_locus: false,
        };
    }

    let (a, b, c) = (&table[m - 1], &table[m], &table[m + 1]);
    let (da, db, dc) = (dist(a), dist(b), dist(c));

    // Triangular solution between the two neighbours.
    let l = ((c.u - a.u).powi(2) + (c.v - a.v).powi(2)).sqrt();
    let x = (da * da - dc * dc + l * l) / (2.0 * l);
    let t_tri = a.kelvin + (c.kelvin - a.kelvin) * x / l;
    let v_tri = a.v + (c.v - a.v) * x / l;
    let duv_tri = (da * da - x * x).max(0.0).sqrt().copysign(p.v - v_tri);

    let (kelvin, duv) = if duv_tri.abs() < 0.002 {
        (t_tri, duv_tri)
    } else {
        // Parabolic fit of distance against temperature.
        let (ta, tb, tc) = (a.kelvin, b.kelvin, c.kelvin);
        let den = (tc - tb) * (ta - tc) * (tb - ta);
        let pa = (ta * (dc - db) + tb * (da - dc) + tc * (db - da)) / den;
        let pb = -(ta * ta * (dc - db) + tb * tb * (da - dc) + tc * tc * (db - da)) / den;
        let pc = -(da * (tc - tb) * tb * tc + db * (ta - tc) * ta * tc + dc * (tb - ta) * ta * tb) / den;
        let t = -pb / (2.0 * pa);
        let d = pa * t * t + pb * t + pc;
        (t, d.copysign(p.v - v_tri))
    };

    CctEstimate {
        kelvin,
        duv,
        in_locus: duv.abs() <= MAX_DUV,
    }
}

/// CCT of a linear sRGB triple (typically a map's mean colour).
pub fn cct(rgb: Rgb) -> Result<CctEstimate> {
    if rgb.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::Domain(rgb[0]));
    }
    if rgb.iter().all(|&c| c <= 0.0) {
        return Err(Error::Degenerate("black input has no colour temperature".into()));
    }
    let p = ChromaticityPoint::from_xyz(rgb_to_xyz(rgb))?;
    Ok(cct_from_chromaticity(&p))
}

/// McCamy's cubic approximation. Kept as an independent cross-check.
pub fn mccamy_cct(x: f64, y: f64) -> f64 {
    let n = (x - 0.3320) / (0.1858 - y);
    449.0 * n.powi(3) + 3525.0 * n.powi(2) + 6823.3 * n + 5520.33
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_spans_range() {
        let t = locus();
        assert_eq!(t[0].kelvin, LOCUS_MIN_K);
        assert_eq!(t.last().unwrap().kelvin, LOCUS_MAX_K);
        assert!(t.len() > 300);
    }

    #[test]
    fn white_is_d65() {
        let e = cct([1.0, 1.0, 1.0]).unwrap();
        assert!((e.kelvin - 6504.0).abs() < 60.0, "{e:?}");
        assert!(e.in_locus);
        // D65 sits slightly above the locus.
        assert!(e.duv > 0.0 && e.duv < 0.006);
    }

    #[test]
    fn illuminant_a() {
        let p = ChromaticityPoint::from_xy(0.4476, 0.4074).unwrap();
        let e = cct_from_chromaticity(&p);
        assert!((e.kelvin - 2856.0).abs() < 30.0, "{e:?}");
        assert!(e.duv.abs() < 1e-3);
    }

    #[test]
    fn black_is_error() {
        assert!(cct([0.0; 3]).is_err());
    }

    #[test]
    fn locus_points_invert() {
        for t in [1200.0, 1850.0, 2700.0, 4000.0, 5500.0, 8000.0, 15000.0, 24000.0] {
            let p = planck_chromaticity(t);
            let e = cct_from_chromaticity(&p);
            assert!((e.kelvin - t).abs() / t < 2e-3, "{t}: {e:?}");
            assert!(e.duv.abs() < 1e-4);
        }
    }

    #[test]
    fn agrees_with_mccamy_near_locus() {
        for t in [2500.0, 3000.0, 4000.0, 5000.0, 6500.0, 8000.0, 10000.0] {
            for offset in [-0.008, 0.0, 0.008] {
                let p = planck_chromaticity(t);
                // Step along the uv normal to the locus by `offset`.
                let q = planck_chromaticity(t * 1.001);
                let (du, dv) = (q.u - p.u, q.v - p.v);
                let n = (du * du + dv * dv).sqrt();
                let (u, v) = (p.u - dv / n * offset, p.v + du / n * offset);
                let d = 2.0 * u - 8.0 * v + 4.0;
                let (x, y) = (3.0 * u / d, 2.0 * v / d);
                let e = cct_from_chromaticity(&ChromaticityPoint::from_xy(x, y).unwrap());
                assert!((e.duv.abs() - offset.abs()).abs() < 5e-4, "{t} {offset}: {e:?}");
                if offset != 0.0 {
                    assert_eq!(e.duv.signum(), (v - p.v).signum());
                }
                assert!((e.kelvin - mccamy_cct(x, y)).abs() < 250.0, "{t} {offset}: {e:?}");
            }
        }
    }

    #[test]
    fn far_off_locus_flagged() {
        // Saturated green is nowhere near a blackbody.
        let e = cct([0.0, 1.0, 0.0]).unwrap();
        assert!(!e.in_locus);
        assert!(e.duv.abs() > MAX_DUV);
    }

    #[test]
    fn warmer_with_more_red() {
        let mut prev = f64::INFINITY;
        for s in [0.5, 0.8, 1.0, 1.25, 1.6, 2.0] {
            let e = cct([s, 1.0, 1.0 / s]).unwrap();
            assert!(e.kelvin < prev);
            prev = e.kelvin;
        }
    }
}
