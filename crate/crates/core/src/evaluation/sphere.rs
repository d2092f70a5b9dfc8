use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envmap::geometry::{sample_direction, texel_direction, Dir};
use crate::envmap::{solid_angle_weights, EnvironmentMap, Rgb};
use crate::error::{Error, Result};

pub const DEFAULT_PHONG_EXPONENT: f64 = 64.0;
pub const DEFAULT_RESOLUTION: usize = 256;
/// Width of the map used for diffuse and glossy convolution.
pub const DEFAULT_CONVOLUTION_WIDTH: usize = 128;
pub const MIN_RESOLUTION: usize = 16;

/// Probe sphere surface. Diffuse is a cosine lobe around the normal, matte a
/// normalised Phong lobe around the mirror direction. Both lobes are
/// integrated by direct summation over texels and normalised to unit
/// integral on the texel grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SphereMaterial {
    Diffuse,
    Matte { phong_exponent: f64 },
    Mirror,
}

impl SphereMaterial {
    /// Diffuse, matte (default exponent) and mirror, in report order.
    pub const fn standard() -> [SphereMaterial; 3] {
        [
            Self::Diffuse,
            Self::Matte {
                phong_exponent: DEFAULT_PHONG_EXPONENT,
            },
            Self::Mirror,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Diffuse => "diffuse",
            Self::Matte { .. } => "matte",
            Self::Mirror => "mirror",
        }
    }
}

/// Square orthographic render of a unit sphere. Pixels outside the disc are
/// black and excluded from metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereImage {
    pub resolution: usize,
    pub pixels: Vec<Rgb>,
    pub covered: Vec<bool>,
}

impl SphereImage {
    pub fn covered_pixels(&self) -> impl Iterator<Item = &Rgb> {
        self.pixels
            .iter()
            .zip(&self.covered)
            .filter(|(_, &c)| c)
            .map(|(p, _)| p)
    }

    pub fn covered_count(&self) -> usize {
        self.covered.iter().filter(|&&c| c).count()
    }

    pub fn map_covered(&self, mut f: impl FnMut(Rgb) -> Rgb) -> Self {
        let pixels = self
            .pixels
            .iter()
            .zip(&self.covered)
            .map(|(&p, &c)| if c { f(p) } else { p })
            .collect();
        Self {
            resolution: self.resolution,
            pixels,
            covered: self.covered.clone(),
        }
    }

    /// Surface normal at the centre of pixel `(i, j)`, if on the sphere.
    pub fn normal_at(resolution: usize, i: usize, j: usize) -> Option<Dir> {
        let x = (i as f64 + 0.5) / resolution as f64 * 2.0 - 1.0;
        let y = 1.0 - (j as f64 + 0.5) / resolution as f64 * 2.0;
        let r2 = x * x + y * y;
        (r2 < 1.0).then(|| Vector3::new(x, y, (1.0 - r2).sqrt()))
    }

    /// Continuous pixel coordinates of the sphere point with normal `n`.
    pub fn pixel_of_normal(resolution: usize, n: &Dir) -> (f64, f64) {
        let r = resolution as f64;
        ((n.x + 1.0) * 0.5 * r - 0.5, (1.0 - n.y) * 0.5 * r - 0.5)
    }
}

/// Mirror direction of the camera ray about `n`.
#[inline]
pub fn reflect_view(n: &Dir) -> Dir {
    let v = Vector3::new(0.0, 0.0, -1.0);
    v - 2.0 * v.dot(n) * n
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub resolution: usize,
    pub convolution_width: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            convolution_width: DEFAULT_CONVOLUTION_WIDTH,
        }
    }
}

/// Box-filters by an integer factor when possible, otherwise resamples.
pub(crate) fn downsample(env: &EnvironmentMap, width: usize) -> Result<EnvironmentMap> {
    let (w, h) = env.dims();
    if width >= w {
        return Ok(env.clone());
    }
    let height = width / 2;
    if w % width != 0 || h % height != 0 {
        return env.resize(width, height);
    }
    let (fx, fy) = (w / width, h / height);
    let norm = 1.0 / (fx * fy) as f64;
    EnvironmentMap::from_fn(width, height, env.range(), |x, y| {
        let mut acc = [0.0; 3];
        for yy in y * fy..(y + 1) * fy {
            for xx in x * fx..(x + 1) * fx {
                let p = env.get(xx, yy);
                for c in 0..3 {
                    acc[c] += p[c];
                }
            }
        }
        acc.map(|v| v * norm)
    })
}

/// Texel directions, solid angles and radiance × solid angle.
struct Emitters {
    dirs: Vec<[f64; 3]>,
    solid_angle: Vec<f64>,
    power: Vec<Rgb>,
}

impl Emitters {
    fn new(env: &EnvironmentMap) -> Result<Self> {
        let (w, h) = env.dims();
        let weights = solid_angle_weights(w, h)?;
        let mut dirs = Vec::with_capacity(w * h);
        let mut solid_angle = Vec::with_capacity(w * h);
        let mut power = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let d = texel_direction(x, y, w, h);
                dirs.push([d.x, d.y, d.z]);
                solid_angle.push(weights.row(y));
                power.push(env.get(x, y).map(|c| c * weights.row(y)));
            }
        }
        Ok(Self {
            dirs,
            solid_angle,
            power,
        })
    }

    /// Lobe-weighted sum of radiance divided by the discrete lobe integral,
    /// so a constant map convolves to exactly that constant.
    fn convolve(&self, axis: &Dir, lobe: impl Fn(f64) -> f64) -> Rgb {
        let mut acc = [0.0; 3];
        let mut norm = 0.0;
        for ((d, p), w) in self.dirs.iter().zip(&self.power).zip(&self.solid_angle) {
            let cos = axis.x * d[0] + axis.y * d[1] + axis.z * d[2];
            if cos > 0.0 {
                let k = lobe(cos);
                acc[0] += p[0] * k;
                acc[1] += p[1] * k;
                acc[2] += p[2] * k;
                norm += w * k;
            }
        }
        if norm > 0.0 {
            acc.map(|v| v / norm)
        } else {
            acc
        }
    }
}

/// Renders `env` on a probe sphere seen by an orthographic camera looking
/// down −Z.
pub fn render_sphere(
    env: &EnvironmentMap,
    material: SphereMaterial,
    config: &RenderConfig,
) -> Result<SphereImage> {
    let res = config.resolution;
    if res < MIN_RESOLUTION {
        return Err(Error::InvalidParameter(format!(
            "sphere resolution {res} is below {MIN_RESOLUTION}"
        )));
    }
    if !env.is_hdr() {
        log::warn!("rendering a sphere from an LDR-tagged map");
    }
    let shade: Box<dyn Fn(&Dir) -> Rgb + Sync + '_> = match material {
        SphereMaterial::Mirror => Box::new(move |n: &Dir| sample_direction(env, &reflect_view(n))),
        SphereMaterial::Diffuse => {
            let em = Emitters::new(&downsample(env, config.convolution_width)?)?;
            Box::new(move |n: &Dir| em.convolve(n, |c| c))
        }
        SphereMaterial::Matte { phong_exponent } => {
            if phong_exponent.is_nan() || phong_exponent <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "phong exponent must be positive, got {phong_exponent}"
                )));
            }
            let em = Emitters::new(&downsample(env, config.convolution_width)?)?;
            let int_exp = (phong_exponent.fract() == 0.0 && phong_exponent <= i32::MAX as f64)
                .then_some(phong_exponent as i32);
            Box::new(move |n: &Dir| {
                let r = reflect_view(n);
                match int_exp {
                    Some(e) => em.convolve(&r, |c| c.powi(e)),
                    None => em.convolve(&r, |c| c.powf(phong_exponent)),
                }
            })
        }
    };
    let rows: Vec<Vec<(Rgb, bool)>> = (0..res)
        .into_par_iter()
        .map(|j| {
            (0..res)
                .map(|i| match SphereImage::normal_at(res, i, j) {
                    Some(n) => (shade(&n), true),
                    None => ([0.0; 3], false),
                })
                .collect()
        })
        .collect();
    let (pixels, covered) = rows.into_iter().flatten().unzip();
    Ok(SphereImage {
        resolution: res,
        pixels,
        covered,
    })
}
