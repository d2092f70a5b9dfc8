use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use envlight::augmentation::{
    bin_and_sample, default_grid, generate_variants, DatasetManifest, ManifestEntry,
};
use envlight::context::SemanticMap;
use envlight::envmap::png::{save_high_intensity, BitDepth};
use envlight::envmap::{EnvironmentMap, Range, Transfer};
use envlight::evaluation::{
    run_robustness, run_three_sphere, Estimator, ProtocolInput, ProtocolRun, RefinementMode,
    RobustnessConfig, RobustnessItem, ThreeSphereConfig, ThreeSphereEntry,
};
use envlight::photometry::{mean_rgb, AmbientLightReading};
use envlight::pipeline::{
    estimate as run_estimate, Backend, BackendDescriptor, BackendKind, EstimationRequest, MockServer,
};
use serde_json::json;

use crate::commands::{parse_bins, parse_transfer, RenderArgs};
use crate::files::{load_map, load_mask, parse_views, read_json, save_map, stem};
use crate::output::Output;
use crate::{synthetic, Format, Global};

pub const BACKEND_URL_ENV: &str = "ENVLIGHT_BACKEND_URL";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EstimatorKind {
    /// Answers with the ground truth.
    Oracle,
    /// Uniform map of the observed mean colour.
    Mean,
    /// The unedited source map, whatever the edit (robustness only).
    Fixed,
    /// The full estimation pipeline through a backend.
    Backend,
}

impl EstimatorKind {
    fn name(self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::Mean => "mean",
            Self::Fixed => "fixed",
            Self::Backend => "backend",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Remote,
    Oracle,
    Fixture,
}

/// Backend selection shared by `estimate`, `serve-mock-backend` and the
/// protocol runs.
#[derive(Args, Debug, Clone)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "remote")]
    pub backend: BackendArg,
    /// Endpoint of a remote backend. ENVLIGHT_BACKEND_URL takes precedence.
    #[arg(long)]
    pub backend_endpoint: Option<String>,
    /// Ground-truth .hdr for the oracle backend, or fixture directory.
    #[arg(long)]
    pub backend_fixture: Option<PathBuf>,
    #[arg(long, default_value_t = envlight::pipeline::DEFAULT_TIMEOUT_MS)]
    pub timeout_ms: u64,
    /// Transfer function of 8-bit images on the wire and in fixtures.
    #[arg(long = "wire-transfer", default_value = "srgb", value_parser = parse_transfer)]
    pub wire_transfer: Transfer,
}

impl BackendArgs {
    pub fn descriptor(&self) -> BackendDescriptor {
        let env_url = std::env::var(BACKEND_URL_ENV)
            .ok()
            .filter(|u| !u.trim().is_empty());
        let kind = match self.backend {
            BackendArg::Remote => BackendKind::Remote,
            BackendArg::Oracle => BackendKind::Oracle,
            BackendArg::Fixture => BackendKind::Fixture,
        };
        BackendDescriptor {
            kind,
            endpoint: env_url.or_else(|| self.backend_endpoint.clone()),
            fixture: self.backend_fixture.clone(),
            timeout_ms: self.timeout_ms,
            transfer: self.wire_transfer,
        }
    }
}

#[derive(Args, Debug)]
pub struct SourceArgs {
    /// Ground-truth HDR maps. Without them, seeded synthetic rooms are used.
    #[arg(long = "gt")]
    pub gt: Vec<PathBuf>,
    /// Number of synthetic rooms when no --gt is given.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Synthetic room size as WIDTHxHEIGHT.
    #[arg(long, default_value = "128x64")]
    pub size: String,
}

impl SourceArgs {
    fn load(&self, default_count: usize, seed: u64) -> anyhow::Result<Vec<(String, EnvironmentMap)>> {
        if !self.gt.is_empty() {
            if self.synthetic.is_some() {
                bail!("--gt and --synthetic are mutually exclusive");
            }
            return self
                .gt
                .iter()
                .map(|p| Ok((stem(p), load_map(p, Transfer::Srgb)?)))
                .collect();
        }
        let (w, h) = parse_bins(&self.size).context("--size")?;
        (0..self.synthetic.unwrap_or(default_count))
            .map(|i| {
                Ok((
                    format!("room_{i:03}"),
                    synthetic::room(w, h, seed.wrapping_add(i as u64))?,
                ))
            })
            .collect()
    }

    fn describe(&self) -> serde_json::Value {
        json!({ "gt": self.gt, "synthetic": self.synthetic, "size": self.size })
    }
}

/// Turns the `--estimator` choice into something the protocols can call.
struct Chosen {
    kind: EstimatorKind,
    /// Per-entry answers for the oracle and fixed estimators.
    answers: HashMap<String, EnvironmentMap>,
    backend: Option<Box<dyn Backend>>,
    seed: u64,
}

impl Estimator for Chosen {
    fn estimate(&self, input: &ProtocolInput<'_>) -> envlight::Result<EnvironmentMap> {
        match self.kind {
            EstimatorKind::Oracle | EstimatorKind::Fixed => {
                self.answers.get(input.id).cloned().ok_or_else(|| {
                    envlight::Error::InvalidParameter(format!("no answer for entry {}", input.id))
                })
            }
            EstimatorKind::Mean => {
                let (w, h) = input.observation.dims();
                let c = if input.mask.is_empty() {
                    [0.5; 3]
                } else {
                    mean_rgb(input.observation, Some(input.mask))?
                };
                Ok(EnvironmentMap::uniform(w, h, c, Range::Ldr)?.into_hdr())
            }
            EstimatorKind::Backend => {
                let backend = self.backend.as_deref().expect("backend connected");
                let req = EstimationRequest::new(input.observation.clone(), input.mask.clone())
                    .with_seed(self.seed);
                Ok(run_estimate(&req, backend).map_err(|f| f.error)?.hdr().clone())
            }
        }
    }
}

fn connect(
    kind: EstimatorKind,
    backend: &BackendArgs,
    seed: u64,
) -> anyhow::Result<Option<Box<dyn Backend>>> {
    if kind != EstimatorKind::Backend {
        return Ok(None);
    }
    Ok(Some(backend.descriptor().connect(seed)?))
}

fn write_run(out: &Output, g: &Global, label: &str, mut run: ProtocolRun) -> anyhow::Result<()> {
    if out.no_timing {
        run.report.runtime_ms = None;
    }
    out.write_jsonl("records.jsonl", &run.records)?;
    match g.format {
        Format::Json => out.write_json("report.json", &run.report)?,
        Format::Csv => out.write_text("report.csv", &run.report.to_csv(label))?,
    };
    out.emit_table(&run.report, || run.report.to_csv(label))
}

#[derive(Args, Debug)]
pub struct ThreeSphereArgs {
    #[arg(long, value_enum, default_value = "oracle")]
    pub estimator: EstimatorKind,
    /// View sampling, e.g. "75deg x1" or "60-120deg x1-5".
    #[arg(long, default_value = "75deg x1")]
    pub views: String,
    #[command(flatten)]
    pub sources: SourceArgs,
    #[command(flatten)]
    pub render: RenderArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

pub fn eval_three_sphere(a: ThreeSphereArgs, g: &Global, out: &Output) -> anyhow::Result<()> {
    if a.estimator == EstimatorKind::Fixed {
        bail!("the fixed estimator only applies to eval-robustness");
    }
    let config = ThreeSphereConfig {
        views: parse_views(&a.views)?,
        render: a.render.config(),
        seed: g.seed,
        workers: g.workers,
        ..Default::default()
    };
    let sources = a.sources.load(8, g.seed)?;
    let estimator = Chosen {
        kind: a.estimator,
        answers: if a.estimator == EstimatorKind::Oracle {
            sources.iter().cloned().collect()
        } else {
            HashMap::new()
        },
        backend: connect(a.estimator, &a.backend, g.seed)?,
        seed: g.seed,
    };
    out.write_manifest(
        "eval-three-sphere",
        g,
        &json!({
            "protocol": config,
            "estimator": a.estimator.name(),
            "sources": a.sources.describe(),
            "entries": sources.iter().map(|(id, _)| id).collect::<Vec<_>>(),
            "backend": (a.estimator == EstimatorKind::Backend).then(|| a.backend.descriptor()),
        }),
    )?;
    let entries: Vec<ThreeSphereEntry> = sources
        .into_iter()
        .map(|(id, gt)| ThreeSphereEntry { id, gt })
        .collect();
    let run = run_three_sphere(&entries, &estimator, &config)?;
    write_run(out, g, a.estimator.name(), run)
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RefinementArg {
    Off,
    On,
    Both,
}

impl From<RefinementArg> for RefinementMode {
    fn from(r: RefinementArg) -> Self {
        match r {
            RefinementArg::Off => RefinementMode::Off,
            RefinementArg::On => RefinementMode::On,
            RefinementArg::Both => RefinementMode::Both,
        }
    }
}

#[derive(Args, Debug)]
pub struct RobustnessArgs {
    #[arg(long, value_enum, default_value = "oracle")]
    pub estimator: EstimatorKind,
    #[arg(long, default_value = "75deg x1")]
    pub views: String,
    #[arg(long, value_enum, default_value = "both")]
    pub refinement: RefinementArg,
    /// Scaling terms, comma separated. Defaults to the 31-value grid.
    #[arg(long, value_delimiter = ',')]
    pub s: Vec<f64>,
    /// INTENSITYxTEMPERATURE bins.
    #[arg(long, default_value = "6x6")]
    pub bins: String,
    #[arg(long, default_value_t = 5)]
    pub per_bin: usize,
    #[command(flatten)]
    pub sources: SourceArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

pub fn eval_robustness(a: RobustnessArgs, g: &Global, out: &Output) -> anyhow::Result<()> {
    let grid = if a.s.is_empty() {
        default_grid()
    } else {
        a.s.clone()
    };
    let (ni, nt) = parse_bins(&a.bins)?;
    let sources = a.sources.load(10, g.seed)?;

    let mut entries = Vec::new();
    for (name, map) in &sources {
        for (spec, variant) in generate_variants(map, &grid)? {
            entries.push(ManifestEntry::measured(name.clone(), spec, &variant)?);
        }
    }
    let binned = bin_and_sample(&DatasetManifest::new(entries), ni, nt, a.per_bin, g.seed)?;
    let by_name: HashMap<&str, &EnvironmentMap> = sources.iter().map(|(n, m)| (n.as_str(), m)).collect();
    let items = binned
        .entries
        .iter()
        .map(|e| {
            let source = by_name[e.source.as_str()];
            Ok(RobustnessItem {
                id: format!("{}/{}", e.source, e.spec.tag()),
                bin: e.bin.expect("binned entries carry a bin"),
                kind: e.spec.kind,
                s: e.spec.s,
                gt: e.spec.apply(source)?.map,
            })
        })
        .collect::<envlight::Result<Vec<_>>>()?;

    let answers = match a.estimator {
        EstimatorKind::Oracle => items.iter().map(|it| (it.id.clone(), it.gt.clone())).collect(),
        EstimatorKind::Fixed => binned
            .entries
            .iter()
            .zip(&items)
            .map(|(e, it)| (it.id.clone(), by_name[e.source.as_str()].to_ldr()))
            .collect(),
        _ => HashMap::new(),
    };
    let estimator = Chosen {
        kind: a.estimator,
        answers,
        backend: connect(a.estimator, &a.backend, g.seed)?,
        seed: g.seed,
    };
    let config = RobustnessConfig {
        views: parse_views(&a.views)?,
        refinement: a.refinement.into(),
        n_bins: Some(ni * nt),
        seed: g.seed,
        workers: g.workers,
    };
    out.write_manifest(
        "eval-robustness",
        g,
        &json!({
            "protocol": config,
            "estimator": a.estimator.name(),
            "sources": a.sources.describe(),
            "grid": grid,
            "bins": [ni, nt],
            "per_bin": a.per_bin,
            "items": items.iter().map(|it| &it.id).collect::<Vec<_>>(),
            "backend": (a.estimator == EstimatorKind::Backend).then(|| a.backend.descriptor()),
        }),
    )?;
    let run = run_robustness(&items, &estimator, &config)?;
    write_run(out, g, a.estimator.name(), run)
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Observed LDR panorama, black outside the mask.
    #[arg(long)]
    pub observation: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Semantic label map (indexed PNG).
    #[arg(long)]
    pub semantics: Option<PathBuf>,
    /// Light-sensor reading as JSON, e.g. from `measure`.
    #[arg(long)]
    pub ambient: Option<PathBuf>,
    /// Number of completion candidates.
    #[arg(long, default_value_t = envlight::pipeline::DEFAULT_OUTPUTS)]
    pub outputs: usize,
    /// Output HDR map.
    #[arg(long, default_value = "estimate.hdr")]
    pub out: PathBuf,
    /// Also write the refined chosen LDR candidate and its high-intensity map.
    #[arg(long)]
    pub save_parts: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Transfer function of PNG inputs and outputs.
    #[arg(long, default_value = "srgb", value_parser = parse_transfer)]
    pub transfer: Transfer,
}

pub fn estimate(a: EstimateArgs, g: &Global, out: &Output) -> anyhow::Result<()> {
    let observation = load_map(&a.observation, a.transfer)?.to_ldr();
    let mask = load_mask(&a.mask)?;
    let mut req = EstimationRequest::new(observation, mask)
        .with_outputs(a.outputs)
        .with_seed(g.seed);
    if let Some(path) = &a.semantics {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        req = req.with_semantics(SemanticMap::from_png(&bytes)?);
    }
    if let Some(path) = &a.ambient {
        req = req.with_ambient(read_json::<AmbientLightReading>(path)?);
    }
    let backend = a.backend.descriptor().connect(g.seed)?;
    let result = match run_estimate(&req, backend.as_ref()) {
        Ok(r) => r,
        Err(failure) => {
            if let Some(partial) = &failure.partial {
                for (i, c) in partial.candidates.iter().enumerate() {
                    save_map(c, &out.dir.join(format!("partial_candidate_{i}.png")), a.transfer)?;
                }
                log::warn!(
                    "estimate failed after selection; {} refined candidates written to {}",
                    partial.candidates.len(),
                    out.dir.display()
                );
            }
            return Err(failure.into());
        }
    };
    let path = out.path(&a.out);
    save_map(result.hdr(), &path, a.transfer)?;
    let mut parts = serde_json::Value::Null;
    if a.save_parts {
        let ldr = out.dir.join("estimate_ldr.png");
        let hi = out.dir.join("estimate_hi.png");
        save_map(result.chosen(), &ldr, a.transfer)?;
        save_high_intensity(result.hi_map(), &hi, BitDepth::Sixteen)?;
        parts = json!({ "ldr": ldr, "high_intensity": hi });
    }
    out.emit(&json!({
        "chosen_index": result.chosen_index(),
        "scores": result.scores(),
        "labels": result.labels(),
        "prompt": result.prompt().as_str(),
        "hdr": path,
        "parts": parts,
        "timings_ms": out.timing(0.0).map(|_| result.timings()),
    }))
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long, default_value_t = 2)]
    pub threads: usize,
}

pub fn serve(a: ServeArgs, g: &Global, _out: &Output) -> anyhow::Result<()> {
    if a.backend.backend == BackendArg::Remote {
        bail!("serve-mock-backend needs --backend oracle or --backend fixture");
    }
    let backend: Arc<dyn Backend> = Arc::from(a.backend.descriptor().connect(g.seed)?);
    let server = MockServer::start(&a.addr, backend, a.threads.max(1))?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", json!({ "url": server.url() }))?;
    stdout.flush()?;
    drop(stdout);
    server.join();
    Ok(())
}
