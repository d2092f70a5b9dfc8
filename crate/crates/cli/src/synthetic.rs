//! Seeded procedural rooms for protocol runs without ground-truth files.

use std::f64::consts::PI;

use envlight::envmap::geometry::{direction_from_angles, texel_direction};
use envlight::envmap::{EnvironmentMap, Range, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// An HDR room: tinted walls, floor and ceiling, a few soft lamps and one
/// small bright source.
pub fn room(width: usize, height: usize, seed: u64) -> anyhow::Result<EnvironmentMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tint = |lo: f64, hi: f64| -> Rgb {
        [
            rng.gen_range(lo..hi),
            rng.gen_range(lo..hi),
            rng.gen_range(lo..hi),
        ]
    };
    let ceiling = tint(0.3, 0.9);
    let floor = tint(0.05, 0.5);
    let walls: Vec<Rgb> = (0..4).map(|_| tint(0.1, 0.8)).collect();
    let lamps: Vec<_> = (0..3)
        .map(|_| {
            let d = direction_from_angles(rng.gen_range(-PI..PI), rng.gen_range(-10f64..60.0).to_radians());
            let c: Rgb = [
                rng.gen_range(0.6..1.0),
                rng.gen_range(0.6..1.0),
                rng.gen_range(0.5..1.0),
            ];
            (d, c, rng.gen_range(0.8..3.0), rng.gen_range(0.9..0.99))
        })
        .collect();
    let sun = direction_from_angles(rng.gen_range(-PI..PI), rng.gen_range(10f64..70.0).to_radians());
    let sun_power = rng.gen_range(8.0..40.0);

    EnvironmentMap::from_fn(width, height, Range::Hdr, |x, y| {
        let d = texel_direction(x, y, width, height);
        let up = d.y;
        let wall = walls[(x * 4 / width).min(3)];
        let base = if up > 0.6 {
            ceiling
        } else if up < -0.3 {
            floor
        } else {
            wall
        };
        let mut c = base;
        for (dir, col, power, cos_edge) in &lamps {
            let cos = d.dot(dir);
            if cos > *cos_edge {
                let w = power * (cos - cos_edge) / (1.0 - cos_edge);
                for k in 0..3 {
                    c[k] += w * col[k];
                }
            }
        }
        if d.dot(&sun) > 0.998 {
            for v in &mut c {
                *v += sun_power;
            }
        }
        c
    })
    .map_err(Into::into)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_hdr() {
        let a = room(64, 32, 3).unwrap();
        assert_eq!(a, room(64, 32, 3).unwrap());
        assert_ne!(a, room(64, 32, 4).unwrap());
        assert!(a.max_value() > 1.0);
    }
}
