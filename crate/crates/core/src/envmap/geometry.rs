//! Direction conventions for equirectangular maps.
//!
//! World frame is right-handed with +Y up. Yaw 0° looks down −Z and yaw
//! grows toward +X; pitch is elevation above the horizon. Column 0 starts at
//! yaw −180° and row 0 at pitch +90°.

use std::f64::consts::PI;

use nalgebra::Vector3;

use super::{EnvironmentMap, Rgb};

pub type Dir = Vector3<f64>;

/// Unit direction for yaw/pitch in radians.
#[inline]
pub fn direction_from_angles(yaw: f64, pitch: f64) -> Dir {
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Vector3::new(cp * sy, sp, -cp * cy)
}

/// Yaw/pitch in radians of a (not necessarily unit) direction.
#[inline]
pub fn angles_from_direction(d: &Dir) -> (f64, f64) {
    let yaw = d.x.atan2(-d.z);
    let horiz = (d.x * d.x + d.z * d.z).sqrt();
    let pitch = d.y.atan2(horiz);
    (yaw, pitch)
}

/// Direction through the centre of texel `(x, y)`.
#[inline]
pub fn texel_direction(x: usize, y: usize, width: usize, height: usize) -> Dir {
    let yaw = ((x as f64 + 0.5) / width as f64) * 2.0 * PI - PI;
    let pitch = 0.5 * PI - ((y as f64 + 0.5) / height as f64) * PI;
    direction_from_angles(yaw, pitch)
}

/// Continuous texel coordinates (texel centres at integers) of a direction.
#[inline]
pub fn direction_to_texel(d: &Dir, width: usize, height: usize) -> (f64, f64) {
    let (yaw, pitch) = angles_from_direction(d);
    let u = (yaw + PI) / (2.0 * PI) * width as f64 - 0.5;
    let v = (0.5 * PI - pitch) / PI * height as f64 - 0.5;
    (u, v)
}

/// Index of the texel containing direction `d`.
#[inline]
pub fn texel_of_direction(d: &Dir, width: usize, height: usize) -> (usize, usize) {
    let (u, v) = direction_to_texel(d, width, height);
    let x = ((u + 0.5).floor() as isize).rem_euclid(width as isize) as usize;
    let y = ((v + 0.5).floor().max(0.0) as usize).min(height - 1);
    (x, y)
}

/// Bilinear radiance lookup along `d`.
pub fn sample_direction(map: &EnvironmentMap, d: &Dir) -> Rgb {
    let (u, v) = direction_to_texel(d, map.width(), map.height());
    map.sample_texel_space(u, v)
}
