use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::multipliers::{refined_region, ColorRefinementMatrix};
use crate::context::ObservationMask;
use crate::envmap::{EnvironmentMap, Rgb};
use crate::error::{Error, Result};

pub const PALETTE_SIZE: usize = 5;
const MAX_ITERATIONS: usize = 50;
/// Convergence threshold on centroid movement, relative to the peak value.
const TOLERANCE: f64 = 1e-4;
/// Histogram resolution per channel for clustering.
const BINS: usize = 32;

/// Dominant colours of a region, sorted by descending weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: [Rgb; PALETTE_SIZE],
    pub weights: [f64; PALETTE_SIZE],
}

struct WeightedPoint {
    color: Rgb,
    weight: f64,
}

fn dist2(a: &Rgb, b: &Rgb) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn region_of(map: &EnvironmentMap, mask: Option<&ObservationMask>) -> Result<Vec<Rgb>> {
    Ok(match mask {
        Some(m) => {
            map.ensure_same_dims(m.dims())?;
            map.pixels()
                .iter()
                .zip(m.bits())
                .filter_map(|(p, &on)| on.then_some(*p))
                .collect()
        }
        None => map.pixels().to_vec(),
    })
}

/// Collapses the region into a colour histogram of peak-normalised colours,
/// returning the peak alongside. Normalised values are snapped to a fine
/// grid so that uniformly scaled inputs cluster identically.
fn histogram(region: &[Rgb]) -> Result<(Vec<WeightedPoint>, f64)> {
    if region.is_empty() {
        return Err(Error::EmptyMask);
    }
    let peak = region.iter().fold(0.0f64, |a, p| a.max(p[0]).max(p[1]).max(p[2]));
    const SNAP: f64 = (1u64 << 30) as f64;
    let inv = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    // Values are non-negative, so the cast rounds half away from zero.
    let normalise = |v: f64| ((v * inv * SNAP + 0.5) as u64) as f64 * (1.0 / SNAP);
    // Bin centres sit on multiples of 1/(BINS-1), away from round levels.
    let bin = |v: f64| ((v * (BINS - 1) as f64 + 0.5) as usize).min(BINS - 1);
    let mut slot = vec![u16::MAX; BINS * BINS * BINS];
    let mut occupied = Vec::new();
    let mut sums: Vec<(Rgb, usize)> = Vec::new();
    for p in region {
        let q = p.map(normalise);
        let k = (bin(q[0]) * BINS + bin(q[1])) * BINS + bin(q[2]);
        if slot[k] == u16::MAX {
            slot[k] = sums.len() as u16;
            occupied.push(k);
            sums.push(([0.0; 3], 0));
        }
        let s = &mut sums[slot[k] as usize];
        for (acc, v) in s.0.iter_mut().zip(q) {
            *acc += v;
        }
        s.1 += 1;
    }
    occupied.sort_unstable();
    let points = occupied
        .into_iter()
        .map(|k| sums[slot[k] as usize])
        .map(|(sum, count)| WeightedPoint {
            color: sum.map(|s| s / count as f64),
            weight: count as f64,
        })
        .collect();
    Ok((points, peak))
}

fn pick_weighted(rng: &mut ChaCha8Rng, weights: impl Iterator<Item = f64> + Clone, total: f64) -> usize {
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
            acc += w;
            if acc > target {
                return i;
            }
        }
    }
    last
}

fn kmeans_pp(points: &[WeightedPoint], rng: &mut ChaCha8Rng) -> [Rgb; PALETTE_SIZE] {
    let total: f64 = points.iter().map(|p| p.weight).sum();
    let first = pick_weighted(rng, points.iter().map(|p| p.weight), total);
    let mut centers = [points[first].color; PALETTE_SIZE];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(&p.color, &centers[0])).collect();
    for center in centers.iter_mut().skip(1) {
        let total: f64 = points.iter().zip(&d2).map(|(p, d)| p.weight * d).sum();
        if total <= 0.0 {
            log::warn!("fewer than {PALETTE_SIZE} distinct colours; palette has duplicates");
            break;
        }
        let next = pick_weighted(rng, points.iter().zip(&d2).map(|(p, d)| p.weight * d), total);
        *center = points[next].color;
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(&p.color, center));
        }
    }
    centers
}

fn nearest(centers: &[Rgb; PALETTE_SIZE], c: &Rgb) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, ctr) in centers.iter().enumerate() {
        let d = dist2(ctr, c);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Five dominant colours of the map (or the masked region) by seeded
/// K-means with k-means++ initialisation.
pub fn extract_palette(map: &EnvironmentMap, mask: Option<&ObservationMask>, seed: u64) -> Result<Palette> {
    palette_of_region(&region_of(map, mask)?, seed)
}

/// As [`extract_palette`], over a list of texel colours.
pub fn palette_of_region(region: &[Rgb], seed: u64) -> Result<Palette> {
    let (points, peak) = histogram(region)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp(&points, &mut rng);
    let mut weights = [0.0; PALETTE_SIZE];
    for iteration in 0..=MAX_ITERATIONS {
        let mut sums = [[0.0; 3]; PALETTE_SIZE];
        weights = [0.0; PALETTE_SIZE];
        for p in &points {
            let k = nearest(&centers, &p.color);
            weights[k] += p.weight;
            for (acc, v) in sums[k].iter_mut().zip(p.color) {
                *acc += p.weight * v;
            }
        }
        if iteration == MAX_ITERATIONS {
            break;
        }
        let mut moved = 0.0f64;
        for k in 0..PALETTE_SIZE {
            if weights[k] > 0.0 {
                let next = sums[k].map(|s| s / weights[k]);
                moved = moved.max(dist2(&next, &centers[k]).sqrt());
                centers[k] = next;
            }
        }
        if moved < TOLERANCE {
            // Centres are fixed, so the assignment above is final.
            break;
        }
    }
    let total: f64 = weights.iter().sum();
    let mut order: [usize; PALETTE_SIZE] = std::array::from_fn(|i| i);
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    Ok(Palette {
        colors: order.map(|k| centers[k].map(|v| v * peak)),
        weights: order.map(|k| weights[k] / total),
    })
}

fn cosine(a: &Rgb, b: &Rgb) -> f64 {
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb)
}

fn permutations() -> &'static [[usize; PALETTE_SIZE]] {
    static PERMS: OnceLock<Vec<[usize; PALETTE_SIZE]>> = OnceLock::new();
    PERMS.get_or_init(|| {
        let mut out = Vec::with_capacity(120);
        let mut p: [usize; PALETTE_SIZE] = std::array::from_fn(|i| i);
        permute(&mut p, 0, &mut out);
        out
    })
}

fn permute(p: &mut [usize; PALETTE_SIZE], k: usize, out: &mut Vec<[usize; PALETTE_SIZE]>) {
    if k == PALETTE_SIZE {
        out.push(*p);
        return;
    }
    for i in k..PALETTE_SIZE {
        p.swap(k, i);
        permute(p, k + 1, out);
        p.swap(k, i);
    }
}

/// Sum of per-colour cosine similarities under the best one-to-one pairing.
pub fn palette_similarity(a: &Palette, b: &Palette) -> f64 {
    let mut table = [[0.0; PALETTE_SIZE]; PALETTE_SIZE];
    for (i, ca) in a.colors.iter().enumerate() {
        for (j, cb) in b.colors.iter().enumerate() {
            table[i][j] = cosine(ca, cb);
        }
    }
    permutations()
        .iter()
        .map(|p| (0..PALETTE_SIZE).map(|i| table[i][p[i]]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Index of the candidate whose palette over the observed region best
/// matches the observation's. Ties go to the lowest index.
pub fn select_best(
    candidates: &[EnvironmentMap],
    observation: &EnvironmentMap,
    mask: &ObservationMask,
    seed: u64,
) -> Result<usize> {
    Ok(select_best_scored(candidates, observation, mask, seed)?.0)
}

/// As [`select_best`], also returning every candidate's similarity.
pub fn select_best_scored(
    candidates: &[EnvironmentMap],
    observation: &EnvironmentMap,
    mask: &ObservationMask,
    seed: u64,
) -> Result<(usize, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no candidates to select from".into()));
    }
    if candidates.len() == 1 {
        candidates[0].ensure_same_dims(mask.dims())?;
        return Ok((0, vec![5.0]));
    }
    let target = extract_palette(observation, Some(mask), seed)?;
    let scores = candidates
        .iter()
        .map(|c| {
            Ok(palette_similarity(
                &extract_palette(c, Some(mask), seed)?,
                &target,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((argmax(&scores), scores))
}

/// As [`select_best_scored`] on `apply_refinement(raw[i], &matrices[i])`,
/// reading only the masked texels of each refined candidate.
pub fn select_best_refined(
    raw: &[EnvironmentMap],
    matrices: &[ColorRefinementMatrix],
    observation: &EnvironmentMap,
    mask: &ObservationMask,
    seed: u64,
) -> Result<(usize, Vec<f64>)> {
    if raw.len() != matrices.len() {
        return Err(Error::InvalidParameter(format!(
            "{} candidates but {} matrices",
            raw.len(),
            matrices.len()
        )));
    }
    if raw.is_empty() {
        return Err(Error::InvalidParameter("no candidates to select from".into()));
    }
    if raw.len() == 1 {
        raw[0].ensure_same_dims(mask.dims())?;
        return Ok((0, vec![5.0]));
    }
    let target = extract_palette(observation, Some(mask), seed)?;
    let scores = raw
        .iter()
        .zip(matrices)
        .map(|(c, m)| {
            let p = palette_of_region(&refined_region(c, m, mask)?, seed)?;
            Ok(palette_similarity(&p, &target))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((argmax(&scores), scores))
}

/// First index of the largest score.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::envmap::Range;

    const BLOCKS: [Rgb; 5] = [
        [0.9, 0.1, 0.1],
        [0.1, 0.8, 0.2],
        [0.15, 0.2, 0.85],
        [0.7, 0.7, 0.7],
        [0.3, 0.25, 0.05],
    ];

    fn blocks() -> EnvironmentMap {
        EnvironmentMap::from_fn(40, 20, Range::Ldr, |x, _| BLOCKS[x / 8]).unwrap()
    }

    fn palette_of(colors: [Rgb; 5]) -> Palette {
        Palette {
            colors,
            weights: [0.2; 5],
        }
    }

    #[test]
    fn five_blocks_recovered() {
        for seed in 0..20 {
            let p = extract_palette(&blocks(), None, seed).unwrap();
            for w in p.weights {
                assert!((w - 0.2).abs() < 1e-6);
            }
            for b in BLOCKS {
                assert!(
                    p.colors.iter().any(|c| dist2(c, &b).sqrt() < 1e-6),
                    "seed {seed}: {p:?}"
                );
            }
        }
    }

    #[test]
    fn uniform_image_gives_duplicates() {
        let m = EnvironmentMap::uniform(16, 8, [0.4, 0.5, 0.6], Range::Ldr).unwrap();
        let p = extract_palette(&m, None, 3).unwrap();
        assert!(p.colors.iter().all(|c| dist2(c, &[0.4, 0.5, 0.6]).sqrt() < 1e-8));
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_sorted() {
        let m = EnvironmentMap::from_fn(64, 32, Range::Ldr, |x, y| {
            [
                (x % 13) as f64 / 13.0,
                (y % 7) as f64 / 7.0,
                ((x * y) % 5) as f64 / 5.0,
            ]
        })
        .unwrap();
        let a = extract_palette(&m, None, 11).unwrap();
        assert_eq!(a, extract_palette(&m, None, 11).unwrap());
        assert!(a.weights.windows(2).all(|w| w[0] >= w[1]));
        assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_error() {
        assert!(matches!(
            extract_palette(&blocks(), Some(&ObservationMask::empty(40, 20)), 0),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn similarity_examples() {
        let a = palette_of(BLOCKS);
        assert!((palette_similarity(&a, &a) - 5.0).abs() < 1e-12);
        let doubled = palette_of(BLOCKS.map(|c| c.map(|v| v * 2.0)));
        assert!((palette_similarity(&a, &doubled) - 5.0).abs() < 1e-12);

        let rgbw = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
            [0.1, 0.1, 0.1],
        ];
        let shuffled = [rgbw[3], rgbw[0], rgbw[4], rgbw[2], rgbw[1]];
        assert!((palette_similarity(&palette_of(rgbw), &palette_of(shuffled)) - 5.0).abs() < 1e-12);

        let zero = palette_of([[0.0; 3]; 5]);
        assert_eq!(palette_similarity(&a, &zero), 0.0);
        assert_eq!(permutations().len(), 120);
    }

    #[test]
    fn select_examples() {
        let obs = blocks();
        let mask = ObservationMask::from_fn(40, 20, |_, y| y < 12);
        assert_eq!(
            select_best(std::slice::from_ref(&obs), &obs, &mask, 0).unwrap(),
            0
        );
        assert!(select_best(&[], &obs, &mask, 0).is_err());

        let gt = obs.map_pixels(|p| p.map(|v| v * 0.5));
        let tints = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0], [2.0, 2.0, 1.0]];
        for pos in 0..5 {
            let mut cands: Vec<EnvironmentMap> = tints
                .iter()
                .map(|t| gt.map_pixels(|p| [p[0] * t[0], p[1] * t[1], p[2] * t[2]]))
                .collect();
            cands.insert(pos, gt.clone());
            assert_eq!(select_best(&cands, &gt, &mask, 0).unwrap(), pos);
        }
        let same = vec![gt.clone(); 4];
        assert_eq!(select_best(&same, &gt, &mask, 0).unwrap(), 0);
    }

    #[test]
    fn refined_selection_matches_full_refinement() {
        use crate::refinement::{apply_refinement, refinement_matrix};
        let obs = blocks();
        let mask = ObservationMask::from_fn(40, 20, |x, y| y < 12 && x > 3);
        let raw: Vec<EnvironmentMap> = [[1.6, 1.0, 0.7], [0.5, 0.9, 1.2], [1.0; 3]]
            .iter()
            .map(|t| obs.map_pixels(|p| [p[0] * t[0], p[1] * t[1], p[2] * t[2]]))
            .collect();
        let matrices: Vec<_> = raw
            .iter()
            .map(|c| refinement_matrix(c, &obs, &mask).unwrap())
            .collect();
        let refined: Vec<_> = raw
            .iter()
            .zip(&matrices)
            .map(|(c, m)| apply_refinement(c, m).unwrap())
            .collect();
        assert_eq!(
            select_best_refined(&raw, &matrices, &obs, &mask, 3).unwrap(),
            select_best_scored(&refined, &obs, &mask, 3).unwrap()
        );
        assert!(select_best_refined(&raw, &matrices[..2], &obs, &mask, 3).is_err());
    }

    fn arb_palette() -> impl Strategy<Value = Palette> {
        proptest::array::uniform5(proptest::array::uniform3(0.0f64..1.0)).prop_map(palette_of)
    }

    proptest! {
        #[test]
        fn similarity_symmetric_and_bounded(a in arb_palette(), b in arb_palette()) {
            let ab = palette_similarity(&a, &b);
            prop_assert!((ab - palette_similarity(&b, &a)).abs() < 1e-12);
            prop_assert!(ab <= 5.0 + 1e-12);
        }

        #[test]
        fn selection_invariant_to_uniform_scale(alpha in 0.1f64..2.0, seed in 0u64..50) {
            let base = EnvironmentMap::from_fn(64, 32, Range::Hdr, |x, y| {
                let h = ((x * 131 + y * 71) as u64 + seed).wrapping_mul(2654435761) % 997;
                [0.1 + 0.4 * (h % 10) as f64 / 10.0, 0.1 + 0.4 * (h % 7) as f64 / 7.0, 0.2]
            }).unwrap();
            let tints = [[1.0, 1.0, 1.0], [1.3, 0.8, 1.0], [0.9, 1.2, 1.1], [1.0, 0.7, 1.4]];
            let cands: Vec<EnvironmentMap> = tints
                .iter()
                .map(|t| base.map_pixels(|p| [p[0] * t[0], p[1] * t[1], p[2] * t[2]]))
                .collect();
            let obs = base.map_pixels(|p| [p[0] * 1.1, p[1], p[2] * 0.95]);
            let mask = ObservationMask::from_fn(64, 32, |x, _| x < 30);
            let scaled: Vec<EnvironmentMap> =
                cands.iter().map(|c| c.map_pixels(|p| p.map(|v| v * alpha))).collect();
            prop_assert_eq!(
                select_best(&cands, &obs, &mask, seed).unwrap(),
                select_best(&scaled, &obs, &mask, seed).unwrap()
            );
        }
    }
}
