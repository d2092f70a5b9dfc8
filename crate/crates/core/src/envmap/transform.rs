use super::{EnvironmentMap, HighIntensityMap, Range, Rgb};
use crate::error::{Error, Result};

/// Largest value a saturated high-intensity texel is clamped to before
/// inversion. Inverts to roughly 16.8.
pub const SATURATION_CLAMP: f64 = 1.0 - 1e-7;

/// Largest double below 1.0. Decomposition never stores more than this.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Compresses radiance above the LDR ceiling into `[0, 1)`:
/// `2 / (1 + e^-i) - 1`, evaluated as `tanh(i / 2)`.
///
/// ```
/// use envlight::envmap::sigmoid_map;
/// assert_eq!(sigmoid_map(0.0), 0.0);
/// assert!((sigmoid_map(3f64.ln()) - 0.5).abs() < 1e-12);
/// ```
pub fn sigmoid_map(intensity: f64) -> f64 {
    (0.5 * intensity).tanh()
}

/// Inverse of [`sigmoid_map`]: `-ln(2 / (m + 1) - 1)`, evaluated as `2 atanh(m)`.
///
/// Close to 1.0 a plain double cannot resolve the input well enough for an
/// accurate inverse; [`Compressed`] keeps the distance below one instead.
pub fn sigmoid_unmap(m: f64) -> Result<f64> {
    if m.is_nan() || m < 0.0 {
        return Err(Error::Domain(m));
    }
    if m >= 1.0 {
        return Err(Error::Saturated(m));
    }
    Ok(2.0 * m.atanh())
}

/// A sigmoid-compressed intensity stored as its headroom `1 - m`.
///
/// The headroom `2 / (1 + e^i)` keeps full relative precision however large
/// `i` gets, so the round trip stays exact to ~1e-15 across the whole domain
/// where `1 - m` rounded to a double would not.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Compressed {
    headroom: f64,
}

impl Compressed {
    pub fn encode(intensity: f64) -> Self {
        let i = intensity.max(0.0);
        let t = (-i).exp();
        Self {
            headroom: 2.0 * t / (1.0 + t),
        }
    }

    pub fn from_value(m: f64) -> Result<Self> {
        if m.is_nan() || m < 0.0 {
            return Err(Error::Domain(m));
        }
        if m >= 1.0 {
            return Err(Error::Saturated(m));
        }
        Ok(Self { headroom: 1.0 - m })
    }

    /// The compressed value `m` in `[0, 1)`.
    pub fn value(self) -> f64 {
        1.0 - self.headroom
    }

    pub fn headroom(self) -> f64 {
        self.headroom
    }

    pub fn decode(self) -> f64 {
        let h = self.headroom;
        (2.0 - h).ln() - h.ln()
    }
}

/// Splits a preprocessed HDR map into its clamped LDR part and the
/// sigmoid-compressed excess above 1.0.
pub fn decompose(hdr: &EnvironmentMap) -> Result<(EnvironmentMap, HighIntensityMap)> {
    if !hdr.is_hdr() {
        return Err(Error::WrongRange {
            expected: Range::Hdr.name(),
        });
    }
    let mut ldr = Vec::with_capacity(hdr.pixels().len());
    let mut hi = Vec::with_capacity(hdr.pixels().len());
    for p in hdr.pixels() {
        ldr.push(p.map(|c| c.clamp(0.0, 1.0)));
        hi.push(p.map(|c| sigmoid_map((c - 1.0).max(0.0)).min(BELOW_ONE)));
    }
    let (w, h) = hdr.dims();
    Ok((
        EnvironmentMap::from_parts(w, h, ldr, Range::Ldr),
        HighIntensityMap::from_parts(w, h, hi),
    ))
}

fn unmap_clamped(m: f64, saturated: &mut usize) -> f64 {
    if m == 0.0 {
        return 0.0;
    }
    let m = if m >= 1.0 {
        *saturated += 1;
        SATURATION_CLAMP
    } else {
        m
    };
    // Domain already validated by HighIntensityMap.
    2.0 * m.atanh()
}

/// Additive recomposition: `ldr + unmap(hi)` per channel.
pub fn recompose(ldr: &EnvironmentMap, hi: &HighIntensityMap) -> Result<EnvironmentMap> {
    ldr.ensure_same_dims(hi.dims())?;
    let mut saturated = 0;
    let pixels: Vec<Rgb> = ldr
        .pixels()
        .iter()
        .zip(hi.values())
        .map(|(l, h)| {
            let mut out = [0.0; 3];
            for c in 0..3 {
                out[c] = l[c] + unmap_clamped(h[c], &mut saturated);
            }
            out
        })
        .collect();
    if saturated > 0 {
        log::warn!("{saturated} saturated high-intensity values clamped to {SATURATION_CLAMP}");
    }
    Ok(EnvironmentMap::from_parts(
        ldr.width(),
        ldr.height(),
        pixels,
        Range::Hdr,
    ))
}

/// Recomposition from a single-channel high-intensity image.
///
/// The excess intensity is distributed along the LDR texel's chroma
/// direction, normalised so its luminance equals the unmapped value. Black
/// LDR texels receive white excess.
pub fn recompose_grayscale(ldr: &EnvironmentMap, hi_gray: &[f64]) -> Result<EnvironmentMap> {
    if hi_gray.len() != ldr.pixels().len() {
        return Err(Error::DimensionMismatch {
            expected: ldr.dims(),
            found: (hi_gray.len(), 1),
        });
    }
    let mut saturated = 0;
    let mut pixels = Vec::with_capacity(hi_gray.len());
    for (l, &g) in ldr.pixels().iter().zip(hi_gray) {
        if !(0.0..=1.0).contains(&g) {
            return Err(Error::Domain(g));
        }
        let excess = unmap_clamped(g, &mut saturated);
        let lum = crate::photometry::luminance(*l);
        let dir = if lum > 1e-12 { l.map(|c| c / lum) } else { [1.0; 3] };
        pixels.push([
            l[0] + excess * dir[0],
            l[1] + excess * dir[1],
            l[2] + excess * dir[2],
        ]);
    }
    if saturated > 0 {
        log::warn!("{saturated} saturated high-intensity values clamped to {SATURATION_CLAMP}");
    }
    Ok(EnvironmentMap::from_parts(
        ldr.width(),
        ldr.height(),
        pixels,
        Range::Hdr,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn map_reference_points() {
        assert_eq!(sigmoid_map(0.0), 0.0);
        assert!((sigmoid_map(3f64.ln()) - 0.5).abs() < 1e-12);
        // Literal formula as an independent check.
        let literal = |i: f64| 2.0 / (1.0 + (-i).exp()) - 1.0;
        let eps = 1.0 - sigmoid_map(20.0);
        assert!(eps > 0.0 && eps < 1e-8);
        assert!((literal(20.0) - sigmoid_map(20.0)).abs() < 1e-15);
        for i in [0.1, 0.7, 2.0, 5.5, 11.0] {
            assert!((literal(i) - sigmoid_map(i)).abs() < 1e-15);
        }
    }

    #[test]
    fn unmap_reference_points() {
        assert_eq!(sigmoid_unmap(0.0).unwrap(), 0.0);
        assert!((sigmoid_unmap(0.5).unwrap() - 3f64.ln()).abs() < 1e-12);
        let v = sigmoid_unmap(0.999999).unwrap();
        let literal = -(2.0 / 1.999999 - 1.0f64).ln();
        assert!((v - literal).abs() < 1e-6);
        assert!((v - 14.5087).abs() < 1e-3);
        assert!((sigmoid_map(v) - 0.999999).abs() < 1e-9);
    }

    #[test]
    fn unmap_domain_errors() {
        assert!(matches!(sigmoid_unmap(1.0), Err(Error::Saturated(_))));
        assert!(matches!(sigmoid_unmap(1.5), Err(Error::Saturated(_))));
        assert!(matches!(sigmoid_unmap(-0.1), Err(Error::Domain(_))));
        assert!(matches!(Compressed::from_value(1.0), Err(Error::Saturated(_))));
    }

    #[test]
    fn plain_double_round_trip_holds_below_twenty_four() {
        let mut i = 0.0;
        while i <= 24.0 {
            let back = sigmoid_unmap(sigmoid_map(i)).unwrap();
            assert!((back - i).abs() < 1e-6, "i = {i}, back = {back}");
            i += 1e-2;
        }
    }

    #[test]
    fn compressed_round_trip_is_exact_far_out() {
        for i in [0.0, 1e-9, 0.3, 3.0, 30.0, 80.0, 700.0] {
            let c = Compressed::encode(i);
            assert!((c.decode() - i).abs() <= 1e-12 * i.max(1.0), "i = {i}");
            if i < 18.0 {
                assert!((c.value() - sigmoid_map(i)).abs() < 1e-15);
            }
        }
    }

    fn hdr(pixels: Vec<Rgb>) -> EnvironmentMap {
        let h = ((pixels.len() / 2) as f64).sqrt() as usize;
        EnvironmentMap::new(2 * h, h, pixels, Range::Hdr).unwrap()
    }

    #[test]
    fn decompose_examples() {
        let (ldr, hi) = decompose(&hdr(vec![[0.5; 3]; 8])).unwrap();
        assert!(ldr.pixels().iter().all(|p| *p == [0.5; 3]));
        assert!(hi.values().iter().all(|p| *p == [0.0; 3]));

        let mut px = vec![[0.2; 3]; 8];
        px[3] = [1.0 + 3f64.ln(); 3];
        px[5] = [100.0, 0.0, 1.0];
        let (ldr, hi) = decompose(&hdr(px)).unwrap();
        assert_eq!(ldr.pixels()[3], [1.0; 3]);
        for c in hi.values()[3] {
            assert!((c - 0.5).abs() < 1e-12);
        }
        assert_eq!(ldr.pixels()[5], [1.0, 0.0, 1.0]);
        let sat = hi.values()[5][0];
        assert!(sat < 1.0 && 1.0 - sat <= f64::EPSILON);
        assert_eq!(hi.values()[5][2], 0.0);
    }

    #[test]
    fn decompose_rejects_ldr() {
        let m = EnvironmentMap::uniform(4, 2, [0.5; 3], Range::Ldr).unwrap();
        assert!(matches!(decompose(&m), Err(Error::WrongRange { .. })));
    }

    #[test]
    fn recompose_examples() {
        let ldr = EnvironmentMap::uniform(4, 2, [0.3; 3], Range::Ldr).unwrap();
        let out = recompose(&ldr, &HighIntensityMap::zeros(4, 2)).unwrap();
        assert_eq!(out.pixels(), ldr.pixels());
        assert!(out.is_hdr());

        let hi = HighIntensityMap::new(4, 2, vec![[0.5; 3]; 8]).unwrap();
        let out = recompose(&ldr, &hi).unwrap();
        assert!((out.pixels()[0][0] - (0.3 + 3f64.ln())).abs() < 1e-12);
        assert!((out.pixels()[0][0] - 1.3986).abs() < 1e-4);

        let saturated = HighIntensityMap::new(4, 2, vec![[1.0; 3]; 8]).unwrap();
        let out = recompose(&ldr, &saturated).unwrap();
        let expect = 0.3 + sigmoid_unmap(SATURATION_CLAMP).unwrap();
        assert!((out.pixels()[0][0] - expect).abs() < 1e-9);
        assert!(out.pixels()[0][0].is_finite());

        assert!(matches!(
            recompose(&ldr, &HighIntensityMap::zeros(8, 4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn round_trip_max_ten() {
        let m = EnvironmentMap::from_fn(32, 16, Range::Hdr, |x, y| {
            let t = ((x * 7 + y * 13) % 23) as f64 / 22.0;
            [t * 10.0, t * 0.9, (1.0 - t) * 4.0]
        })
        .unwrap();
        let (ldr, hi) = decompose(&m).unwrap();
        let back = recompose(&ldr, &hi).unwrap();
        for ((p, q), l) in m.pixels().iter().zip(back.pixels()).zip(ldr.pixels()) {
            for c in 0..3 {
                if l[c] < 1.0 {
                    assert_eq!(p[c], q[c]);
                } else {
                    assert!((p[c] - q[c]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn grayscale_recompose_adds_luminance() {
        let ldr = EnvironmentMap::uniform(4, 2, [0.8, 0.4, 0.2], Range::Ldr).unwrap();
        let gray = vec![0.5; 8];
        let out = recompose_grayscale(&ldr, &gray).unwrap();
        let lum_in = crate::photometry::luminance([0.8, 0.4, 0.2]);
        let lum_out = crate::photometry::luminance(out.pixels()[0]);
        assert!((lum_out - lum_in - 3f64.ln()).abs() < 1e-12);
        // Chroma direction preserved.
        let p = out.pixels()[0];
        assert!((p[0] / p[1] - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn map_is_strictly_increasing(a in 0.0f64..25.0, d in 1e-3f64..5.0) {
            prop_assert!(sigmoid_map(a + d) > sigmoid_map(a));
        }

        #[test]
        fn round_trip_within_fifteen(v in proptest::collection::vec(0.0f64..15.0, 24)) {
            let px: Vec<Rgb> = v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            let m = EnvironmentMap::new(4, 2, px, Range::Hdr).unwrap();
            let (ldr, hi) = decompose(&m).unwrap();
            let back = recompose(&ldr, &hi).unwrap();
            for (p, q) in m.pixels().iter().zip(back.pixels()) {
                for c in 0..3 {
                    prop_assert!((p[c] - q[c]).abs() < 1e-5);
                }
            }
        }
    }
}
