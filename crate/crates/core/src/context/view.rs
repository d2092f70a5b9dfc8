use std::ops::RangeInclusive;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ObservationMask;
use crate::envmap::geometry::{texel_direction, Dir};
use crate::error::{Error, Result};

/// A pinhole camera pose and field of view. Angles in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub yaw: f64,
    pub pitch: f64,
    #[serde(default)]
    pub roll: f64,
    pub hfov: f64,
    pub aspect: f64,
}

impl ViewSpec {
    pub fn new(yaw: f64, pitch: f64, hfov: f64, aspect: f64) -> Result<Self> {
        let v = Self {
            yaw: yaw.rem_euclid(360.0),
            pitch,
            roll: 0.0,
            hfov,
            aspect,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn with_roll(mut self, roll: f64) -> Self {
        self.roll = roll;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("{what}: {self:?}")));
        if !(0.0..360.0).contains(&self.yaw) {
            return bad("yaw must be in [0, 360)");
        }
        if !(-90.0..=90.0).contains(&self.pitch) {
            return bad("pitch must be in [-90, 90]");
        }
        if !(self.hfov >= 0.0 && self.hfov < 180.0) {
            return bad("hfov must be in (0, 180)");
        }
        if !(self.aspect > 0.0 && self.aspect.is_finite()) {
            return bad("aspect must be positive");
        }
        if !self.roll.is_finite() {
            return bad("roll must be finite");
        }
        Ok(())
    }

    /// Vertical field of view in degrees.
    pub fn vfov(&self) -> f64 {
        2.0 * ((0.5 * self.hfov.to_radians()).tan() / self.aspect)
            .atan()
            .to_degrees()
    }

    pub(crate) fn half_tangents(&self) -> (f64, f64) {
        let tx = (0.5 * self.hfov.to_radians()).tan();
        (tx, tx / self.aspect)
    }

    /// Camera-to-world rotation. The camera looks down its local −Z with +Y up.
    pub fn camera_to_world(&self) -> Rotation3<f64> {
        let yaw = Rotation3::from_axis_angle(&Vector3::y_axis(), -self.yaw.to_radians());
        let pitch = Rotation3::from_axis_angle(&Vector3::x_axis(), self.pitch.to_radians());
        let roll = Rotation3::from_axis_angle(&Vector3::z_axis(), self.roll.to_radians());
        yaw * pitch * roll
    }

    /// Analytic solid angle of the rectangular frustum, in steradians.
    pub fn frustum_solid_angle(&self) -> f64 {
        let a = 0.5 * self.hfov.to_radians();
        let b = 0.5 * self.vfov().to_radians();
        4.0 * (a.sin() * b.sin()).asin()
    }
}

/// Precomputed inside-test for one view.
pub(crate) struct Frustum {
    world_to_camera: Matrix3<f64>,
    tx: f64,
    ty: f64,
}

impl Frustum {
    pub(crate) fn new(view: &ViewSpec) -> Self {
        let (tx, ty) = view.half_tangents();
        Self {
            world_to_camera: view.camera_to_world().inverse().into_inner(),
            tx,
            ty,
        }
    }

    pub(crate) fn to_camera(&self, d: &Dir) -> Dir {
        self.world_to_camera * d
    }

    /// Normalised image-plane coordinates in `[-1, 1]²` if `d` is inside.
    #[inline]
    pub(crate) fn project(&self, d: &Dir) -> Option<(f64, f64)> {
        let c = self.to_camera(d);
        if c.z >= 0.0 {
            return None;
        }
        let sx = c.x / (-c.z) / self.tx;
        let sy = c.y / (-c.z) / self.ty;
        if sx.abs() <= 1.0 && sy.abs() <= 1.0 {
            Some((sx, sy))
        } else {
            None
        }
    }
}

/// Marks every texel whose centre direction falls inside the view frustum.
pub fn project_view_mask(view: &ViewSpec, width: usize, height: usize) -> Result<ObservationMask> {
    view.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    if width != 2 * height {
        return Err(Error::InvalidAspect { width, height });
    }
    if view.hfov == 0.0 {
        return Ok(ObservationMask::empty(width, height));
    }
    let f = Frustum::new(view);
    Ok(ObservationMask::from_fn(width, height, |x, y| {
        f.project(&texel_direction(x, y, width, height)).is_some()
    }))
}

/// Ranges for [`sample_random_views`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSampling {
    pub count: RangeInclusive<usize>,
    /// Horizontal field of view, degrees.
    pub fov: RangeInclusive<f64>,
    /// Camera pitch, degrees.
    pub pitch: RangeInclusive<f64>,
    pub aspect: f64,
}

impl Default for ViewSampling {
    fn default() -> Self {
        Self {
            count: 1..=5,
            fov: 60.0..=120.0,
            pitch: -30.0..=30.0,
            aspect: 4.0 / 3.0,
        }
    }
}

/// Draws a seeded random set of views. Yaw, pitch and FoV are uniform over
/// their ranges; the number of views is uniform over `count`.
pub fn sample_random_views(seed: u64, sampling: &ViewSampling) -> Result<Vec<ViewSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_views_with(&mut rng, sampling)
}

pub(crate) fn sample_views_with(rng: &mut impl Rng, s: &ViewSampling) -> Result<Vec<ViewSpec>> {
    if s.count.start() > s.count.end() || *s.count.start() == 0 {
        return Err(Error::InvalidParameter(format!(
            "bad view count range {:?}",
            s.count
        )));
    }
    if s.fov.start() > s.fov.end() || *s.fov.start() <= 0.0 || *s.fov.end() >= 180.0 {
        return Err(Error::InvalidParameter(format!("bad fov range {:?}", s.fov)));
    }
    if s.pitch.start() > s.pitch.end() || *s.pitch.start() < -90.0 || *s.pitch.end() > 90.0 {
        return Err(Error::InvalidParameter(format!("bad pitch range {:?}", s.pitch)));
    }
    let n = rng.gen_range(s.count.clone());
    (0..n)
        .map(|_| {
            let yaw = rng.gen_range(0.0..360.0);
            let pitch = rng.gen_range(s.pitch.clone());
            let hfov = rng.gen_range(s.fov.clone());
            ViewSpec::new(yaw, pitch, hfov, s.aspect)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::envmap::geometry::texel_of_direction;

    #[test]
    fn cube_face_coverage() {
        let v = ViewSpec::new(0.0, 0.0, 90.0, 1.0).unwrap();
        // A 90°x90° frustum is one cube face: 4π/6.
        assert!((v.frustum_solid_angle() - 4.0 * PI / 6.0).abs() < 1e-12);
        let m = project_view_mask(&v, 512, 256).unwrap();
        let expect = 1.0 / 6.0;
        assert!((m.coverage_fraction() - expect).abs() < 0.01);
    }

    #[test]
    fn zero_fov_is_empty() {
        let v = ViewSpec::new(10.0, 0.0, 0.0, 1.0).unwrap();
        assert!(project_view_mask(&v, 64, 32).unwrap().is_empty());
    }

    #[test]
    fn straight_up_is_a_polar_cap() {
        let v = ViewSpec::new(0.0, 90.0, 90.0, 1.0).unwrap();
        let m = project_view_mask(&v, 128, 64).unwrap();
        // Top rows fully covered, bottom half empty.
        assert!((0..128).all(|x| m.get(x, 0) && m.get(x, 5)));
        assert!((0..128).all(|x| (32..64).all(|y| !m.get(x, y))));
        // Rotating the yaw of a straight-up view rotates the square footprint;
        // a 90° yaw turn maps it onto itself.
        let r = project_view_mask(&ViewSpec::new(90.0, 90.0, 90.0, 1.0).unwrap(), 128, 64).unwrap();
        let shifted = ObservationMask::from_fn(128, 64, |x, y| m.get((x + 128 - 32) % 128, y));
        let diff = r
            .bits()
            .iter()
            .zip(shifted.bits())
            .filter(|(a, b)| a != b)
            .count();
        assert!(diff <= 8, "{diff}");
    }

    #[test]
    fn rejects_bad_views() {
        assert!(ViewSpec::new(0.0, 0.0, 180.0, 1.0).is_err());
        assert!(ViewSpec::new(0.0, 95.0, 60.0, 1.0).is_err());
        assert!(ViewSpec::new(0.0, 0.0, 60.0, 0.0).is_err());
        let v = ViewSpec {
            yaw: 0.0,
            pitch: 0.0,
            roll: 0.0,
            hfov: 200.0,
            aspect: 1.0,
        };
        assert!(project_view_mask(&v, 64, 32).is_err());
    }

    #[test]
    fn interior_directions_land_on_masked_texels() {
        let (w, h) = (256, 128);
        let views = sample_random_views(3, &ViewSampling::default()).unwrap();
        for v in views {
            let m = project_view_mask(&v, w, h).unwrap();
            let rot = v.camera_to_world();
            let (tx, ty) = v.half_tangents();
            for i in 0..40 {
                for j in 0..40 {
                    let sx = (i as f64 + 0.5) / 20.0 - 1.0;
                    let sy = (j as f64 + 0.5) / 20.0 - 1.0;
                    let d = rot * Vector3::new(sx * tx, sy * ty, -1.0).normalize();
                    let (x, y) = texel_of_direction(&d, w, h);
                    let hit = (-1isize..=1).any(|dy| {
                        (-1isize..=1).any(|dx| {
                            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                            let xx = (x as isize + dx).rem_euclid(w as isize) as usize;
                            m.get(xx, yy)
                        })
                    });
                    assert!(hit, "{v:?} ({sx}, {sy})");
                }
            }
        }
    }

    #[test]
    fn random_views_deterministic_and_ranged() {
        let s = ViewSampling::default();
        assert_eq!(
            sample_random_views(0, &s).unwrap(),
            sample_random_views(0, &s).unwrap()
        );
        let fixed = ViewSampling {
            fov: 75.0..=75.0,
            ..Default::default()
        };
        for seed in 0..50 {
            let views = sample_random_views(seed, &fixed).unwrap();
            assert!((1..=5).contains(&views.len()));
            for v in views {
                assert_eq!(v.hfov, 75.0);
                assert!((-30.0..=30.0).contains(&v.pitch));
            }
        }
    }

    #[test]
    fn view_count_is_uniform() {
        // Chi-square goodness of fit, 4 degrees of freedom; 13.28 is the
        // p = 0.01 critical value.
        let s = ViewSampling::default();
        let mut hist = [0usize; 5];
        let n = 10_000;
        for seed in 0..n {
            hist[sample_random_views(seed, &s).unwrap().len() - 1] += 1;
        }
        let expect = n as f64 / 5.0;
        let chi2: f64 = hist.iter().map(|&o| (o as f64 - expect).powi(2) / expect).sum();
        assert!(chi2 < 13.28, "{hist:?} chi2 = {chi2}");
    }

    #[test]
    #[allow(clippy::reversed_empty_ranges)]
    fn inverted_ranges_rejected() {
        let bad = ViewSampling {
            count: 5..=1,
            ..Default::default()
        };
        assert!(sample_random_views(0, &bad).is_err());
        let bad = ViewSampling {
            fov: 120.0..=60.0,
            ..Default::default()
        };
        assert!(sample_random_views(0, &bad).is_err());
    }
}
