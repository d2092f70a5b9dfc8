use serde::{Deserialize, Serialize};

use crate::context::ObservationMask;
use crate::envmap::{EnvironmentMap, Range, Rgb};
use crate::error::{Error, Result};

/// Lower and upper clamp for every multiplier.
pub const MULTIPLIER_BOUNDS: (f64, f64) = (0.1, 10.0);
/// Patch grid used for local multipliers (columns, rows).
pub const DEFAULT_GRID: (usize, usize) = (8, 8);
const DENOM_FLOOR: f64 = 1e-6;

fn ratio(num: f64, den: f64) -> f64 {
    // Both sides black carries no colour information.
    if num <= DENOM_FLOOR && den <= DENOM_FLOOR {
        return 1.0;
    }
    num / den.max(DENOM_FLOOR)
}

fn clamp_mult(m: Rgb) -> Rgb {
    m.map(|v| v.clamp(MULTIPLIER_BOUNDS.0, MULTIPLIER_BOUNDS.1))
}

fn check_inputs(
    estimate: &EnvironmentMap,
    observation: &EnvironmentMap,
    mask: &ObservationMask,
) -> Result<()> {
    estimate.ensure_same_dims(observation.dims())?;
    estimate.ensure_same_dims(mask.dims())
}

/// Ratio of mean observed colour to mean estimated colour over the mask.
/// Unclamped; the matrix applies the clamp.
pub fn global_multiplier(
    estimate: &EnvironmentMap,
    observation: &EnvironmentMap,
    mask: &ObservationMask,
) -> Result<Rgb> {
    check_inputs(estimate, observation, mask)?;
    let mut est = [0.0; 3];
    let mut obs = [0.0; 3];
    let mut n = 0usize;
    for ((e, o), &on) in estimate
        .pixels()
        .iter()
        .zip(observation.pixels())
        .zip(mask.bits())
    {
        if on {
            for c in 0..3 {
                est[c] += e[c];
                obs[c] += o[c];
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let n = n as f64;
    Ok([0, 1, 2].map(|c| ratio(obs[c] / n, est[c] / n)))
}

/// Per-patch multipliers on a `cols × rows` grid, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub cols: usize,
    pub rows: usize,
    pub values: Vec<Rgb>,
    /// Whether any texel of the patch was observed.
    pub observed: Vec<bool>,
}

impl PatchGrid {
    pub fn get(&self, col: usize, row: usize) -> Rgb {
        self.values[row * self.cols + col]
    }
}

/// Patch index of texel `(x, y)`.
#[inline]
fn patch_of(x: usize, y: usize, dims: (usize, usize), grid: (usize, usize)) -> (usize, usize) {
    (x * grid.0 / dims.0, y * grid.1 / dims.1)
}

/// Mean-ratio multipliers for each patch of the grid. Patches without
/// observed texels get `(1, 1, 1)`.
pub fn local_multipliers(
    estimate: &EnvironmentMap,
    observation: &EnvironmentMap,
    mask: &ObservationMask,
    grid: (usize, usize),
) -> Result<PatchGrid> {
    check_inputs(estimate, observation, mask)?;
    check_grid(estimate, grid)?;
    Ok(patch_sums(estimate, observation, mask, grid).multipliers())
}

fn check_grid(estimate: &EnvironmentMap, (cols, rows): (usize, usize)) -> Result<()> {
    if cols == 0 || rows == 0 || cols > estimate.width() || rows > estimate.height() {
        return Err(Error::InvalidParameter(format!("patch grid {cols}x{rows}")));
    }
    Ok(())
}

/// Masked colour sums per patch.
struct PatchSums {
    cols: usize,
    rows: usize,
    est: Vec<Rgb>,
    obs: Vec<Rgb>,
    count: Vec<usize>,
}

fn patch_sums(
    estimate: &EnvironmentMap,
    observation: &EnvironmentMap,
    mask: &ObservationMask,
    grid: (usize, usize),
) -> PatchSums {
    let (cols, rows) = grid;
    let mut est = vec![[0.0; 3]; cols * rows];
    let mut obs = vec![[0.0; 3]; cols * rows];
    let mut count = vec![0usize; cols * rows];
    let (w, h) = estimate.dims();
    let col_of: Vec<usize> = (0..w).map(|x| x * cols / w).collect();
    for y in 0..h {
        let base = (y * rows / h) * cols;
        let span = y * w..(y + 1) * w;
        let texels = estimate.pixels()[span.clone()]
            .iter()
            .zip(&observation.pixels()[span.clone()])
            .zip(&mask.bits()[span]);
        for (((e, o), &on), &px) in texels.zip(&col_of) {
            if on {
                let k = base + px;
                for c in 0..3 {
                    est[k][c] += e[c];
                    obs[k][c] += o[c];
                }
                count[k] += 1;
            }
        }
    }
    PatchSums {
        cols,
        rows,
        est,
        obs,
        count,
    }
}

impl PatchSums {
    fn global(&self) -> Result<Rgb> {
        let n: usize = self.count.iter().sum();
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        let total = |v: &[Rgb], c: usize| v.iter().map(|p| p[c]).sum::<f64>() / n as f64;
        Ok([0, 1, 2].map(|c| ratio(total(&self.obs, c), total(&self.est, c))))
    }

    fn multipliers(&self) -> PatchGrid {
        let (cols, rows) = (self.cols, self.rows);
        let (est, obs, count) = (&self.est, &self.obs, &self.count);
        let values = (0..cols * rows)
            .map(|k| {
                if count[k] == 0 {
                    [1.0; 3]
                } else {
                    [0, 1, 2].map(|c| ratio(obs[k][c], est[k][c]))
                }
            })
            .collect();
        PatchGrid {
            cols,
            rows,
            values,
            observed: count.iter().map(|&n| n > 0).collect(),
        }
    }
}

/// Smooth per-texel colour multipliers for one map.
///
/// Stored at patch resolution; each texel takes its patch's value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorRefinementMatrix {
    width: usize,
    height: usize,
    grid: PatchGrid,
}

impl ColorRefinementMatrix {
    pub fn identity(width: usize, height: usize) -> Self {
        Self::constant(width, height, [1.0; 3])
    }

    pub fn constant(width: usize, height: usize, m: Rgb) -> Self {
        Self {
            width,
            height,
            grid: PatchGrid {
                cols: 1,
                rows: 1,
                values: vec![clamp_mult(m)],
                observed: vec![true],
            },
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// The smoothed patch field.
    pub fn patches(&self) -> &PatchGrid {
        &self.grid
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let (px, py) = patch_of(x, y, self.dims(), (self.grid.cols, self.grid.rows));
        self.grid.get(px, py)
    }

    /// Per-texel multipliers, row-major.
    pub fn multipliers(&self) -> Vec<Rgb> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.get(x, y));
            }
        }
        out
    }
}

/// Builds the multiplier field: observed patches take their local value,
/// unobserved patches the global one, then a per-channel 3×3 median at patch
/// resolution (wrapping in longitude, clamped at the poles) and the clamp.
pub fn build_refinement_matrix(
    global: Rgb,
    locals: &PatchGrid,
    mask: &ObservationMask,
) -> Result<ColorRefinementMatrix> {
    let (cols, rows) = (locals.cols, locals.rows);
    if locals.values.len() != cols * rows || locals.observed.len() != cols * rows {
        return Err(Error::InvalidParameter("patch grid size mismatch".into()));
    }
    let (w, h) = mask.dims();
    if cols > w || rows > h {
        return Err(Error::InvalidParameter(format!(
            "patch grid {cols}x{rows} for {w}x{h}"
        )));
    }
    let field: Vec<Rgb> = (0..cols * rows)
        .map(|k| {
            if locals.observed[k] {
                locals.values[k]
            } else {
                global
            }
        })
        .collect();
    let mut smoothed = Vec::with_capacity(field.len());
    for r in 0..rows {
        for c in 0..cols {
            let mut taps = [[0.0; 9]; 3];
            let mut t = 0;
            for dr in [-1isize, 0, 1] {
                let rr = (r as isize + dr).clamp(0, rows as isize - 1) as usize;
                for dc in [-1isize, 0, 1] {
                    let cc = (c as isize + dc).rem_euclid(cols as isize) as usize;
                    let v = field[rr * cols + cc];
                    for ch in 0..3 {
                        taps[ch][t] = v[ch];
                    }
                    t += 1;
                }
            }
            let m = taps.map(|mut ch| {
                ch.sort_unstable_by(f64::total_cmp);
                ch[4]
            });
            smoothed.push(clamp_mult(m));
        }
    }
    Ok(ColorRefinementMatrix {
        width: w,
        height: h,
        grid: PatchGrid {
            cols,
            rows,
            values: smoothed,
            observed: locals.observed.clone(),
        },
    })
}

#[inline]
fn scale(p: &Rgb, m: &Rgb, hi: f64) -> Rgb {
    [
        (p[0] * m[0]).max(0.0).min(hi),
        (p[1] * m[1]).max(0.0).min(hi),
        (p[2] * m[2]).max(0.0).min(hi),
    ]
}

fn upper_bound(map: &EnvironmentMap) -> f64 {
    if map.range() == Range::Ldr {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Multiplies each texel by its multiplier; LDR results are clamped to `[0, 1]`.
pub fn apply_refinement(estimate: &EnvironmentMap, matrix: &ColorRefinementMatrix) -> Result<EnvironmentMap> {
    estimate.ensure_same_dims(matrix.dims())?;
    let (w, h) = estimate.dims();
    let grid = matrix.patches();
    let col_of: Vec<usize> = (0..w).map(|x| x * grid.cols / w).collect();
    let hi = upper_bound(estimate);
    let mut pixels = Vec::with_capacity(w * h);
    for (y, row) in estimate.pixels().chunks_exact(w).enumerate() {
        let py = y * grid.rows / h;
        let mults = &grid.values[py * grid.cols..(py + 1) * grid.cols];
        pixels.extend(row.iter().zip(&col_of).map(|(p, &px)| scale(p, &mults[px], hi)));
    }
    Ok(EnvironmentMap::from_parts(w, h, pixels, estimate.range()))
}

/// The texels of `apply_refinement(estimate, matrix)` inside `mask`, in
/// row-major order, without building the whole map.
pub fn refined_region(
    estimate: &EnvironmentMap,
    matrix: &ColorRefinementMatrix,
    mask: &ObservationMask,
) -> Result<Vec<Rgb>> {
    estimate.ensure_same_dims(matrix.dims())?;
    estimate.ensure_same_dims(mask.dims())?;
    let hi = upper_bound(estimate);
    let w = estimate.width();
    Ok(estimate
        .pixels()
        .iter()
        .zip(mask.bits())
        .enumerate()
        .filter(|(_, (_, &on))| on)
        .map(|(i, (p, _))| scale(p, &matrix.get(i % w, i / w), hi))
        .collect())
}

/// Global plus local multipliers, matrix and application in one call.
pub fn refine(
    estimate: &EnvironmentMap,
    observation: &EnvironmentMap,
    mask: &ObservationMask,
) -> Result<EnvironmentMap> {
    let matrix = refinement_matrix(estimate, observation, mask)?;
    apply_refinement(estimate, &matrix)
}

/// Matrix for refining `estimate` against `observation`. An empty mask
/// yields the identity.
pub fn refinement_matrix(
    estimate: &EnvironmentMap,
    observation: &EnvironmentMap,
    mask: &ObservationMask,
) -> Result<ColorRefinementMatrix> {
    check_inputs(estimate, observation, mask)?;
    if mask.is_empty() {
        return Ok(ColorRefinementMatrix::identity(
            estimate.width(),
            estimate.height(),
        ));
    }
    check_grid(estimate, DEFAULT_GRID)?;
    let sums = patch_sums(estimate, observation, mask, DEFAULT_GRID);
    build_refinement_matrix(sums.global()?, &sums.multipliers(), mask)
}
