use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{angular_error, ldr_rmse, rmse, si_rmse};
use super::sphere::{render_sphere, RenderConfig, SphereMaterial};
use crate::augmentation::AugmentationKind;
use crate::context::{
    apply_mask, compose_masks, project_view_mask, sample_views_with, ObservationMask, ViewSampling, ViewSpec,
};
use crate::envmap::EnvironmentMap;
use crate::error::{Error, Result};
use crate::refinement::refine;

/// What an estimator sees for one protocol entry.
pub struct ProtocolInput<'a> {
    pub id: &'a str,
    /// Masked LDR observation (unobserved texels are zero).
    pub observation: &'a EnvironmentMap,
    pub mask: &'a ObservationMask,
}

/// Anything that turns a partial observation into a full map.
pub trait Estimator: Sync {
    fn estimate(&self, input: &ProtocolInput<'_>) -> Result<EnvironmentMap>;
}

impl<F> Estimator for F
where
    F: Fn(&ProtocolInput<'_>) -> Result<EnvironmentMap> + Sync,
{
    fn estimate(&self, input: &ProtocolInput<'_>) -> Result<EnvironmentMap> {
        self(input)
    }
}

/// Seed for entry `index` of a run seeded with `seed`.
pub fn entry_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Draws the views for one entry and builds their combined mask.
pub fn entry_mask(
    sampling: &ViewSampling,
    seed: u64,
    width: usize,
    height: usize,
) -> Result<(Vec<ViewSpec>, ObservationMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let views = sample_views_with(&mut rng, sampling)?;
    let masks = views
        .iter()
        .map(|v| project_view_mask(v, width, height))
        .collect::<Result<Vec<_>>>()?;
    Ok((views, compose_masks(&masks)?))
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThreeSphereEntry {
    pub id: String,
    /// Ground-truth HDR map.
    pub gt: EnvironmentMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeSphereConfig {
    pub views: ViewSampling,
    pub materials: Vec<SphereMaterial>,
    pub render: RenderConfig,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

impl Default for ThreeSphereConfig {
    fn default() -> Self {
        Self {
            views: ViewSampling {
                count: 1..=1,
                fov: 75.0..=75.0,
                ..Default::default()
            },
            materials: SphereMaterial::standard().to_vec(),
            render: RenderConfig::default(),
            seed: 0,
            workers: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialRecord {
    pub material: String,
    /// `None` when the percentile remap was degenerate.
    pub rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_flag: Option<String>,
    pub si_rmse: f64,
    pub angular_error_degrees: f64,
}

/// Per-entry outcome of a protocol run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryRecord {
    pub id: String,
    pub coverage: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub materials: Vec<MaterialRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ldr_rmse_off: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ldr_rmse_on: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EntryRecord {
    fn failed(id: &str, coverage: f64, e: &Error) -> Self {
        Self {
            id: id.to_owned(),
            coverage,
            materials: Vec::new(),
            bin: None,
            ldr_rmse_off: None,
            ldr_rmse_on: None,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialSummary {
    pub material: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phong_exponent: Option<f64>,
    pub rmse: Option<f64>,
    pub si_rmse: Option<f64>,
    pub angular_error_degrees: Option<f64>,
    /// Entries whose RMSE was undefined (zero percentile spread).
    pub rmse_flagged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub bin: usize,
    pub count: usize,
    pub kinds: Vec<AugmentationKind>,
    pub mean_s: Option<f64>,
    pub mean_abs_log_s: Option<f64>,
    pub ldr_rmse_off: Option<f64>,
    pub ldr_rmse_on: Option<f64>,
}

/// Aggregate results of a protocol run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: String,
    pub entries: usize,
    pub failures: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub materials: Vec<MaterialSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bins: Vec<BinSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
}

impl MetricReport {
    pub fn material(&self, name: &str) -> Option<&MaterialSummary> {
        self.materials.iter().find(|m| m.material == name)
    }

    /// CSV in the layout metric × {diffuse, matte, mirror}, one row per run,
    /// or one row per bin for robustness runs.
    pub fn to_csv(&self, label: &str) -> String {
        let mut out = String::new();
        if !self.materials.is_empty() {
            let names: Vec<&str> = self.materials.iter().map(|m| m.material.as_str()).collect();
            out.push_str("configuration");
            for metric in ["si_rmse", "angular_error", "rmse"] {
                for n in &names {
                    let _ = write!(out, ",{metric}_{n}");
                }
            }
            out.push('\n');
            out.push_str(&csv_field(label));
            let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
            for m in &self.materials {
                let _ = write!(out, ",{}", cell(m.si_rmse));
            }
            for m in &self.materials {
                let _ = write!(out, ",{}", cell(m.angular_error_degrees));
            }
            for m in &self.materials {
                let _ = write!(out, ",{}", cell(m.rmse));
            }
            out.push('\n');
        }
        if !self.bins.is_empty() {
            out.push_str("configuration,bin,count,kinds,mean_s,ldr_rmse_off,ldr_rmse_on\n");
            let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
            for b in &self.bins {
                let kinds: Vec<&str> = b.kinds.iter().map(|k| k.name()).collect();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    csv_field(label),
                    b.bin,
                    b.count,
                    kinds.join("|"),
                    cell(b.mean_s),
                    cell(b.ldr_rmse_off),
                    cell(b.ldr_rmse_on)
                );
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Report plus per-entry records.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolRun {
    pub report: MetricReport,
    pub records: Vec<EntryRecord>,
}

fn three_sphere_entry(
    entry: &ThreeSphereEntry,
    seed: u64,
    estimator: &dyn Estimator,
    config: &ThreeSphereConfig,
) -> EntryRecord {
    let (w, h) = entry.gt.dims();
    let (_, mask) = match entry_mask(&config.views, seed, w, h) {
        Ok(m) => m,
        Err(e) => return EntryRecord::failed(&entry.id, 0.0, &e),
    };
    let coverage = mask.coverage_fraction();
    let run = || -> Result<Vec<MaterialRecord>> {
        let observation = apply_mask(&entry.gt.to_ldr(), &mask)?;
        let input = ProtocolInput {
            id: &entry.id,
            observation: &observation,
            mask: &mask,
        };
        let est = estimator.estimate(&input)?;
        let est = if est.dims() == entry.gt.dims() {
            est
        } else {
            est.resize(w, h)?
        };
        let mut out = Vec::new();
        for &m in &config.materials {
            let a = render_sphere(&est, m, &config.render)?;
            let b = render_sphere(&entry.gt, m, &config.render)?;
            let (r, flag) = match rmse(&a, &b) {
                Ok(v) => (Some(v), None),
                Err(Error::Degenerate(msg)) => (None, Some(msg)),
                Err(e) => return Err(e),
            };
            out.push(MaterialRecord {
                material: m.name().to_owned(),
                rmse: r,
                rmse_flag: flag,
                si_rmse: si_rmse(&a, &b)?,
                angular_error_degrees: angular_error(&a, &b)?,
            });
        }
        Ok(out)
    };
    match run() {
        Ok(materials) => EntryRecord {
            id: entry.id.clone(),
            coverage,
            materials,
            bin: None,
            ldr_rmse_off: None,
            ldr_rmse_on: None,
            error: None,
        },
        Err(e) => EntryRecord::failed(&entry.id, coverage, &e),
    }
}

/// Masks each ground truth with seeded random views, runs the estimator and
/// compares sphere renders of estimate and ground truth per material.
pub fn run_three_sphere(
    entries: &[ThreeSphereEntry],
    estimator: &dyn Estimator,
    config: &ThreeSphereConfig,
) -> Result<ProtocolRun> {
    if config.materials.is_empty() {
        return Err(Error::InvalidParameter("no materials".into()));
    }
    let start = Instant::now();
    let records: Vec<EntryRecord> = with_workers(config.workers, || {
        entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| three_sphere_entry(e, entry_seed(config.seed, i), estimator, config))
            .collect()
    })?;
    let ok: Vec<&EntryRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let materials = config
        .materials
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let rows = || ok.iter().map(move |r| &r.materials[k]);
            MaterialSummary {
                material: m.name().to_owned(),
                phong_exponent: match m {
                    SphereMaterial::Matte { phong_exponent } => Some(*phong_exponent),
                    _ => None,
                },
                rmse: mean(rows().filter_map(|r| r.rmse)),
                si_rmse: mean(rows().map(|r| r.si_rmse)),
                angular_error_degrees: mean(rows().map(|r| r.angular_error_degrees)),
                rmse_flagged: rows().filter(|r| r.rmse.is_none()).count(),
            }
        })
        .collect();
    let report = MetricReport {
        protocol: "three_sphere".into(),
        entries: records.len(),
        failures: records.len() - ok.len(),
        materials,
        bins: Vec::new(),
        runtime_ms: Some(start.elapsed().as_secs_f64() * 1e3),
    };
    Ok(ProtocolRun { report, records })
}

/// One edited variant in a robustness run.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessItem {
    pub id: String,
    pub bin: usize,
    pub kind: AugmentationKind,
    pub s: f64,
    /// The edited map in LDR; the reference for the completed estimate.
    pub gt: EnvironmentMap,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefinementMode {
    Off,
    On,
    #[default]
    Both,
}

impl RefinementMode {
    fn off(self) -> bool {
        matches!(self, Self::Off | Self::Both)
    }

    fn on(self) -> bool {
        matches!(self, Self::On | Self::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub views: ViewSampling,
    pub refinement: RefinementMode,
    /// Total number of bins, so empty ones are reported.
    pub n_bins: Option<usize>,
    pub seed: u64,
    pub workers: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            views: ThreeSphereConfig::default().views,
            refinement: RefinementMode::Both,
            n_bins: None,
            seed: 0,
            workers: 0,
        }
    }
}

fn robustness_item(
    item: &RobustnessItem,
    seed: u64,
    estimator: &dyn Estimator,
    config: &RobustnessConfig,
) -> EntryRecord {
    let gt = item.gt.to_ldr();
    let (w, h) = gt.dims();
    let (_, mask) = match entry_mask(&config.views, seed, w, h) {
        Ok(m) => m,
        Err(e) => return EntryRecord::failed(&item.id, 0.0, &e),
    };
    let coverage = mask.coverage_fraction();
    let run = || -> Result<(Option<f64>, Option<f64>)> {
        let observation = apply_mask(&gt, &mask)?;
        let input = ProtocolInput {
            id: &item.id,
            observation: &observation,
            mask: &mask,
        };
        let est = estimator.estimate(&input)?.to_ldr();
        let est = if est.dims() == (w, h) {
            est
        } else {
            est.resize(w, h)?
        };
        let off = if config.refinement.off() {
            Some(ldr_rmse(&est, &gt)?)
        } else {
            None
        };
        let on = if config.refinement.on() {
            Some(ldr_rmse(&refine(&est, &observation, &mask)?, &gt)?)
        } else {
            None
        };
        Ok((off, on))
    };
    match run() {
        Ok((off, on)) => EntryRecord {
            id: item.id.clone(),
            coverage,
            materials: Vec::new(),
            bin: Some(item.bin),
            ldr_rmse_off: off,
            ldr_rmse_on: on,
            error: None,
        },
        Err(e) => {
            let mut r = EntryRecord::failed(&item.id, coverage, &e);
            r.bin = Some(item.bin);
            r
        }
    }
}

/// Completes each edited variant from a masked observation and reports the
/// mean LDR RMSE per bin, without and/or with colour refinement.
pub fn run_robustness(
    items: &[RobustnessItem],
    estimator: &dyn Estimator,
    config: &RobustnessConfig,
) -> Result<ProtocolRun> {
    let start = Instant::now();
    let records: Vec<EntryRecord> = with_workers(config.workers, || {
        items
            .par_iter()
            .enumerate()
            .map(|(i, it)| robustness_item(it, entry_seed(config.seed, i), estimator, config))
            .collect()
    })?;
    let mut by_bin: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    if let Some(n) = config.n_bins {
        for b in 0..n {
            by_bin.entry(b).or_default();
        }
    }
    for (i, it) in items.iter().enumerate() {
        by_bin.entry(it.bin).or_default().push(i);
    }
    let bins = by_bin
        .into_iter()
        .map(|(bin, idx)| {
            let ok: Vec<usize> = idx
                .iter()
                .copied()
                .filter(|&i| records[i].error.is_none())
                .collect();
            if ok.is_empty() {
                log::warn!("robustness bin {bin} has no completed entries");
            }
            let mut kinds: Vec<AugmentationKind> = idx.iter().map(|&i| items[i].kind).collect();
            kinds.sort_by_key(|k| k.name());
            kinds.dedup();
            BinSummary {
                bin,
                count: ok.len(),
                kinds,
                mean_s: mean(ok.iter().map(|&i| items[i].s)),
                mean_abs_log_s: mean(ok.iter().map(|&i| items[i].s.ln().abs())),
                ldr_rmse_off: mean(ok.iter().filter_map(|&i| records[i].ldr_rmse_off)),
                ldr_rmse_on: mean(ok.iter().filter_map(|&i| records[i].ldr_rmse_on)),
            }
        })
        .collect();
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    let report = MetricReport {
        protocol: "robustness".into(),
        entries: records.len(),
        failures,
        materials: Vec::new(),
        bins,
        runtime_ms: Some(start.elapsed().as_secs_f64() * 1e3),
    };
    Ok(ProtocolRun { report, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envmap::Range;

    fn gt(seed: usize) -> EnvironmentMap {
        EnvironmentMap::from_fn(64, 32, Range::Hdr, |x, y| {
            let lamp = if (x + seed) % 64 == 10 && y == 8 {
                20.0
            } else {
                0.0
            };
            [
                0.2 + 0.3 * ((x + seed) % 9) as f64 / 9.0 + lamp,
                0.3 + 0.2 * (y % 4) as f64 / 4.0 + lamp,
                0.25 + lamp,
            ]
        })
        .unwrap()
    }

    fn entries() -> Vec<ThreeSphereEntry> {
        (0..3)
            .map(|i| ThreeSphereEntry {
                id: format!("e{i}"),
                gt: gt(i * 5),
            })
            .collect()
    }

    fn config() -> ThreeSphereConfig {
        ThreeSphereConfig {
            render: RenderConfig {
                resolution: 24,
                convolution_width: 32,
            },
            ..Default::default()
        }
    }

    fn lookup(
        entries: &[ThreeSphereEntry],
    ) -> impl Fn(&ProtocolInput<'_>) -> Result<EnvironmentMap> + Sync + '_ {
        move |input: &ProtocolInput<'_>| Ok(entries.iter().find(|e| e.id == input.id).unwrap().gt.clone())
    }

    #[test]
    fn oracle_scores_zero() {
        let es = entries();
        let run = run_three_sphere(&es, &lookup(&es), &config()).unwrap();
        assert_eq!(run.report.failures, 0);
        for m in &run.report.materials {
            assert!(
                m.rmse.unwrap() < 1e-9
                    && m.si_rmse.unwrap() < 1e-9
                    && m.angular_error_degrees.unwrap() < 1e-6,
                "{m:?}"
            );
        }
    }

    #[test]
    fn half_scale_is_invisible_to_metrics() {
        let es = entries();
        let est = |input: &ProtocolInput<'_>| Ok(lookup(&es)(input)?.map_pixels(|p| p.map(|v| v * 0.5)));
        let run = run_three_sphere(&es, &est, &config()).unwrap();
        for m in &run.report.materials {
            assert!(
                m.rmse.unwrap() < 1e-9
                    && m.si_rmse.unwrap() < 1e-9
                    && m.angular_error_degrees.unwrap() < 1e-6,
                "{m:?}"
            );
        }
    }

    #[test]
    fn uniform_gray_flags_rmse() {
        let es = entries();
        let est = |_: &ProtocolInput<'_>| EnvironmentMap::uniform(64, 32, [0.5; 3], Range::Hdr);
        let run = run_three_sphere(&es, &est, &config()).unwrap();
        assert_eq!(run.report.failures, 0);
        for m in &run.report.materials {
            assert_eq!(m.rmse_flagged, 3, "{m:?}");
            assert!(m.rmse.is_none());
        }
        assert!(run
            .records
            .iter()
            .all(|r| r.materials.iter().all(|m| m.rmse_flag.is_some())));
    }

    #[test]
    fn estimator_failures_are_counted() {
        let es = entries();
        let est = |input: &ProtocolInput<'_>| {
            if input.id == "e1" {
                Err(Error::Timeout(5))
            } else {
                lookup(&es)(input)
            }
        };
        let run = run_three_sphere(&es, &est, &config()).unwrap();
        assert_eq!(run.report.failures, 1);
        assert!(run.records[1].error.is_some());
    }

    #[test]
    fn deterministic_records_and_csv() {
        let es = entries();
        let mut a = run_three_sphere(&es, &lookup(&es), &config()).unwrap();
        let mut b = run_three_sphere(
            &es,
            &lookup(&es),
            &ThreeSphereConfig {
                workers: 1,
                ..config()
            },
        )
        .unwrap();
        a.report.runtime_ms = None;
        b.report.runtime_ms = None;
        assert_eq!(a, b);
        let csv = a.report.to_csv("RGB 75deg x1");
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "configuration,si_rmse_diffuse,si_rmse_matte,si_rmse_mirror,angular_error_diffuse,angular_error_matte,angular_error_mirror,rmse_diffuse,rmse_matte,rmse_mirror"
        );
        assert!(lines.next().unwrap().starts_with("RGB 75deg x1,0.000000"));
    }

    fn items() -> Vec<RobustnessItem> {
        let base = gt(0).to_ldr().map_pixels(|p| p.map(|v| v * 0.5));
        [0.5, 1.0, 2.0]
            .iter()
            .enumerate()
            .map(|(b, &s)| RobustnessItem {
                id: format!("i{b}"),
                bin: b,
                kind: AugmentationKind::Intensity,
                s,
                gt: base.map_pixels(|p| p.map(|v| v * s)),
            })
            .collect()
    }

    #[test]
    fn robustness_oracle_and_fixed_output() {
        let its = items();
        let oracle =
            |input: &ProtocolInput<'_>| Ok(its.iter().find(|i| i.id == input.id).unwrap().gt.clone());
        let run = run_robustness(
            &its,
            &oracle,
            &RobustnessConfig {
                n_bins: Some(4),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(run.report.bins.len(), 4);
        assert_eq!(run.report.bins[3].count, 0);
        for b in &run.report.bins[..3] {
            assert!(
                b.ldr_rmse_off.unwrap() < 1e-12 && b.ldr_rmse_on.unwrap() < 1e-9,
                "{b:?}"
            );
        }

        let fixed = its[1].gt.clone();
        let est = |_: &ProtocolInput<'_>| Ok(fixed.clone());
        let run = run_robustness(&its, &est, &RobustnessConfig::default()).unwrap();
        let off: Vec<f64> = run.report.bins.iter().map(|b| b.ldr_rmse_off.unwrap()).collect();
        assert!(off[1] < 1e-12 && off[0] > 0.0 && off[2] > off[0]);
        let on: Vec<f64> = run.report.bins.iter().map(|b| b.ldr_rmse_on.unwrap()).collect();
        assert!(on[0] < off[0] && on[2] < off[2], "{on:?} {off:?}");
        assert!(run.report.to_csv("x").contains("bin,count"));
    }
}
