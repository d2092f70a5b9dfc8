use super::view::{Frustum, ViewSpec};
use super::ObservationMask;
use crate::envmap::geometry::texel_direction;
use crate::envmap::png::RgbFrame;
use crate::envmap::{EnvironmentMap, Range, Rgb};
use crate::error::{Error, Result};

/// Accumulates camera frames into an equirectangular canvas. Later frames
/// overwrite earlier ones where they overlap.
#[derive(Clone, Debug)]
pub struct Stitcher {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
    mask: ObservationMask,
}

impl Stitcher {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        if width != 2 * height {
            return Err(Error::InvalidAspect { width, height });
        }
        Ok(Self {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
            mask: ObservationMask::empty(width, height),
        })
    }

    pub fn add(&mut self, frame: &RgbFrame, view: &ViewSpec) -> Result<()> {
        view.validate()?;
        if frame.width == 0 || frame.height == 0 || frame.pixels.len() != frame.width * frame.height {
            return Err(Error::InvalidDimensions {
                width: frame.width,
                height: frame.height,
            });
        }
        if view.hfov == 0.0 {
            return Ok(());
        }
        let f = Frustum::new(view);
        for y in 0..self.height {
            for x in 0..self.width {
                let d = texel_direction(x, y, self.width, self.height);
                if let Some((sx, sy)) = f.project(&d) {
                    self.pixels[y * self.width + x] = sample_frame(frame, sx, sy);
                    self.mask.set(x, y, true);
                }
            }
        }
        Ok(())
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn finish(self) -> (EnvironmentMap, ObservationMask) {
        let map = EnvironmentMap::from_parts(self.width, self.height, self.pixels, Range::Ldr);
        (map, self.mask)
    }
}

/// Bilinear lookup at normalised image coordinates; `sy = 1` is the top edge.
fn sample_frame(frame: &RgbFrame, sx: f64, sy: f64) -> Rgb {
    let (w, h) = (frame.width, frame.height);
    let fx = ((sx + 1.0) * 0.5 * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = ((1.0 - sy) * 0.5 * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = frame.get(x0, y0)[c] * (1.0 - tx) + frame.get(x1, y0)[c] * tx;
        let bottom = frame.get(x0, y1)[c] * (1.0 - tx) + frame.get(x1, y1)[c] * tx;
        *o = top * (1.0 - ty) + bottom * ty;
    }
    out
}

/// Projects one camera frame onto an empty equirectangular canvas.
pub fn stitch_observation(
    frame: &RgbFrame,
    view: &ViewSpec,
    width: usize,
    height: usize,
) -> Result<(EnvironmentMap, ObservationMask)> {
    let mut s = Stitcher::new(width, height)?;
    s.add(frame, view)?;
    Ok(s.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::project_view_mask;

    fn frame(w: usize, h: usize, f: impl Fn(usize, usize) -> Rgb) -> RgbFrame {
        let mut pixels = Vec::new();
        for y in 0..h {
            for x in 0..w {
                pixels.push(f(x, y));
            }
        }
        RgbFrame {
            width: w,
            height: h,
            pixels,
        }
    }

    #[test]
    fn uniform_frame_fills_covered_region() {
        let c = [0.2, 0.5, 0.7];
        let v = ViewSpec::new(30.0, 10.0, 80.0, 4.0 / 3.0).unwrap();
        let (map, mask) = stitch_observation(&frame(40, 30, |_, _| c), &v, 128, 64).unwrap();
        assert!(mask.count() > 0);
        for (p, &on) in map.pixels().iter().zip(mask.bits()) {
            if on {
                assert!(p.iter().zip(c).all(|(a, b)| (a - b).abs() < 1e-12));
            } else {
                assert_eq!(*p, [0.0; 3]);
            }
        }
    }

    #[test]
    fn mask_matches_projection() {
        for v in [
            ViewSpec::new(0.0, 0.0, 75.0, 4.0 / 3.0).unwrap(),
            ViewSpec::new(200.0, -25.0, 110.0, 1.0).unwrap().with_roll(33.0),
        ] {
            let (_, mask) = stitch_observation(&frame(8, 6, |_, _| [1.0; 3]), &v, 256, 128).unwrap();
            assert_eq!(mask, project_view_mask(&v, 256, 128).unwrap());
        }
    }

    #[test]
    fn roll_half_turn_inverts_content() {
        // Top half red, bottom half blue.
        let img = frame(
            20,
            20,
            |_, y| if y < 10 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] },
        );
        let upright = ViewSpec::new(0.0, 0.0, 60.0, 1.0).unwrap();
        let flipped = upright.with_roll(180.0);
        let (a, _) = stitch_observation(&img, &upright, 256, 128).unwrap();
        let (b, _) = stitch_observation(&img, &flipped, 256, 128).unwrap();
        // Yaw 0 is the centre column; row 50 is above the horizon.
        assert_eq!(a.get(128, 50), [1.0, 0.0, 0.0]);
        assert_eq!(b.get(128, 50), [0.0, 0.0, 1.0]);
        assert_eq!(a.get(128, 77), [0.0, 0.0, 1.0]);
        assert_eq!(b.get(128, 77), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn later_frames_win() {
        let v = ViewSpec::new(0.0, 0.0, 90.0, 1.0).unwrap();
        let mut s = Stitcher::new(64, 32).unwrap();
        s.add(&frame(4, 4, |_, _| [1.0, 0.0, 0.0]), &v).unwrap();
        s.add(&frame(4, 4, |_, _| [0.0, 1.0, 0.0]), &v).unwrap();
        let (map, mask) = s.finish();
        assert!(map
            .pixels()
            .iter()
            .zip(mask.bits())
            .filter(|(_, &on)| on)
            .all(|(p, _)| *p == [0.0, 1.0, 0.0]));
    }
}
