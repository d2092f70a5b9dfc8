use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use envlight::augmentation::{
    bin_and_sample, default_grid, measure_map, AugmentationKind, AugmentationSpec, DatasetManifest,
    ManifestEntry,
};
use envlight::context::{
    build_prompt_p1, compose_masks, project_view_mask, sample_random_views, Stitcher, ViewSpec,
};
use envlight::envmap::png::{load_high_intensity, load_rgb_frame, save_high_intensity, BitDepth};
use envlight::envmap::{self, EnvironmentMap, Range, Transfer};
use envlight::evaluation::{render_sphere, RenderConfig, SphereMaterial};
use envlight::photometry::{self, classify_ambient, mean_rgb, AmbientLightReading};
use envlight::refinement::{
    apply_refinement, refinement_matrix, select_best_refined, select_best_scored, ColorRefinementMatrix,
};
use serde::Serialize;
use serde_json::json;

use crate::files::{load_map, load_mask, parse_view, parse_views, read_json, save_bytes, save_map, stem};
use crate::output::Output;
use crate::Global;

pub fn parse_transfer(s: &str) -> Result<Transfer, String> {
    s.parse().map_err(|e: envlight::Error| e.to_string())
}

#[derive(Args, Debug)]
pub struct TransferArg {
    /// Transfer function of 8-bit PNG maps.
    #[arg(long, default_value = "srgb", value_parser = parse_transfer)]
    pub transfer: Transfer,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Depth {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

impl From<Depth> for BitDepth {
    fn from(d: Depth) -> Self {
        match d {
            Depth::Eight => BitDepth::Eight,
            Depth::Sixteen => BitDepth::Sixteen,
        }
    }
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    /// HDR input map.
    pub input: PathBuf,
    #[arg(long)]
    pub out_ldr: PathBuf,
    #[arg(long)]
    pub out_hi: PathBuf,
    /// Bit depth of the high-intensity PNG.
    #[arg(long, value_enum, default_value = "16")]
    pub hi_depth: Depth,
    #[command(flatten)]
    pub transfer: TransferArg,
}

pub fn decompose(a: DecomposeArgs, out: &Output) -> anyhow::Result<()> {
    let hdr = load_map(&a.input, a.transfer.transfer)?;
    let (ldr, hi) = envmap::decompose(&hdr)?;
    let (ldr_path, hi_path) = (out.path(&a.out_ldr), out.path(&a.out_hi));
    save_map(&ldr, &ldr_path, a.transfer.transfer)?;
    if let Some(dir) = hi_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        out.ensure_dir(dir)?;
    }
    save_high_intensity(&hi, &hi_path, a.hi_depth.into())
        .with_context(|| format!("writing {}", hi_path.display()))?;
    let saturated = hdr.pixels().iter().filter(|p| p.iter().any(|&v| v > 1.0)).count();
    out.emit(&json!({
        "width": hdr.width(),
        "height": hdr.height(),
        "max_value": hdr.max_value(),
        "saturated_fraction": saturated as f64 / hdr.pixels().len() as f64,
        "ldr": ldr_path,
        "high_intensity": hi_path,
    }))
}

#[derive(Args, Debug)]
pub struct RecomposeArgs {
    /// LDR map (.png or .hdr).
    pub ldr: PathBuf,
    /// High-intensity PNG (8 or 16 bit).
    pub hi: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub transfer: TransferArg,
}

pub fn recompose(a: RecomposeArgs, out: &Output) -> anyhow::Result<()> {
    let ldr = load_map(&a.ldr, a.transfer.transfer)?;
    let hi = load_high_intensity(&a.hi).with_context(|| format!("reading {}", a.hi.display()))?;
    let hdr = envmap::recompose(&ldr, &hi)?;
    let path = out.path(&a.out);
    save_map(&hdr, &path, a.transfer.transfer)?;
    out.emit(&json!({
        "width": hdr.width(),
        "height": hdr.height(),
        "max_value": hdr.max_value(),
        "hdr": path,
    }))
}

#[derive(Args, Debug)]
pub struct MeasureArgs {
    pub input: PathBuf,
    /// Restrict the per-pixel measurements to this mask.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    pub transfer: TransferArg,
}

#[derive(Serialize)]
struct MeasureRecord {
    width: usize,
    height: usize,
    #[serde(flatten)]
    reading: AmbientLightReading,
    mean_rgb: [f64; 3],
}

pub fn measure(a: MeasureArgs, out: &Output) -> anyhow::Result<()> {
    let map = load_map(&a.input, a.transfer.transfer)?;
    let mask = a.mask.as_deref().map(load_mask).transpose()?;
    let reading = photometry::measure(&map, mask.as_ref())?;
    let rec = MeasureRecord {
        width: map.width(),
        height: map.height(),
        reading,
        mean_rgb: mean_rgb(&map, mask.as_ref())?,
    };
    out.emit_table(&rec, || {
        format!(
            "width,height,mean_intensity,total_luminance,cct_kelvin,cct_out_of_locus\n{},{},{},{},{},{}\n",
            rec.width,
            rec.height,
            reading.mean_intensity,
            reading.total_luminance,
            reading.cct_kelvin,
            reading.cct_out_of_locus
        )
    })
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    /// Map to measure (.hdr or .png). Alternative to --reading or the explicit values.
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// JSON ambient reading, e.g. from `measure`.
    #[arg(long, conflicts_with = "input")]
    pub reading: Option<PathBuf>,
    #[arg(long, requires = "cct", conflicts_with_all = ["input", "reading"])]
    pub mean_intensity: Option<f64>,
    /// Colour temperature, Kelvin.
    #[arg(long, requires = "mean_intensity")]
    pub cct: Option<f64>,
    #[command(flatten)]
    pub transfer: TransferArg,
}

pub fn classify(a: ClassifyArgs, out: &Output) -> anyhow::Result<()> {
    let reading = if let Some(path) = &a.reading {
        read_json::<AmbientLightReading>(path)?
    } else if let (Some(mean_intensity), Some(cct)) = (a.mean_intensity, a.cct) {
        AmbientLightReading {
            mean_intensity,
            total_luminance: f64::NAN,
            cct_kelvin: cct,
            cct_out_of_locus: false,
        }
    } else if let Some(input) = &a.input {
        let map = load_map(input, a.transfer.transfer)?;
        let mask = a.mask.as_deref().map(load_mask).transpose()?;
        photometry::measure(&map, mask.as_ref())?
    } else {
        bail!("classify needs a map, --reading, or --mean-intensity with --cct");
    };
    let labels = classify_ambient(&reading);
    out.emit(&json!({
        "mean_intensity": reading.mean_intensity,
        "cct_kelvin": reading.cct_kelvin,
        "labels": labels,
        "prompt": build_prompt_p1(&labels).as_str(),
    }))
}

#[derive(Args, Debug)]
pub struct MaskArgs {
    /// A view as yaw,pitch,hfov[,aspect[,roll]] in degrees. Repeatable.
    #[arg(long = "view", allow_hyphen_values = true)]
    pub views: Vec<String>,
    /// Draw seeded random views instead, e.g. "60-120deg x1-5".
    #[arg(long, conflicts_with = "views")]
    pub random: Option<String>,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    /// Output mask PNG.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn mask(a: MaskArgs, g: &Global, out: &Output) -> anyhow::Result<()> {
    let views: Vec<ViewSpec> = match &a.random {
        Some(text) => sample_random_views(g.seed, &parse_views(text)?)?,
        None if a.views.is_empty() => bail!("give at least one --view or --random"),
        None => a
            .views
            .iter()
            .map(|v| parse_view(v))
            .collect::<anyhow::Result<_>>()?,
    };
    let masks = views
        .iter()
        .map(|v| project_view_mask(v, a.width, a.height))
        .collect::<envlight::Result<Vec<_>>>()?;
    let mask = compose_masks(&masks)?;
    let path = a.out.as_ref().map(|p| out.path(p));
    if let Some(p) = &path {
        save_bytes(p, &mask.to_png()?)?;
    }
    out.emit(&json!({
        "width": a.width,
        "height": a.height,
        "coverage_fraction": mask.coverage_fraction(),
        "views": views,
        "mask": path,
    }))
}

#[derive(Args, Debug)]
pub struct StitchArgs {
    /// Camera frame (PNG). Repeatable; pairs with --view in order.
    #[arg(long = "frame", required = true)]
    pub frames: Vec<PathBuf>,
    /// View of the matching frame, yaw,pitch,hfov[,aspect[,roll]].
    #[arg(long = "view", required = true, allow_hyphen_values = true)]
    pub views: Vec<String>,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long)]
    pub out_observation: PathBuf,
    #[arg(long)]
    pub out_mask: PathBuf,
    #[command(flatten)]
    pub transfer: TransferArg,
}

pub fn stitch(a: StitchArgs, out: &Output) -> anyhow::Result<()> {
    if a.frames.len() != a.views.len() {
        bail!("{} frames but {} views", a.frames.len(), a.views.len());
    }
    let mut stitcher = Stitcher::new(a.width, a.height)?;
    for (frame, view) in a.frames.iter().zip(&a.views) {
        let img = load_rgb_frame(frame, a.transfer.transfer)
            .with_context(|| format!("reading {}", frame.display()))?;
        stitcher.add(&img, &parse_view(view)?)?;
    }
    let (observation, mask) = stitcher.finish();
    let (obs_path, mask_path) = (out.path(&a.out_observation), out.path(&a.out_mask));
    save_map(&observation, &obs_path, a.transfer.transfer)?;
    save_bytes(&mask_path, &mask.to_png()?)?;
    out.emit(&json!({
        "frames": a.frames.len(),
        "coverage_fraction": mask.coverage_fraction(),
        "observation": obs_path,
        "mask": mask_path,
    }))
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Intensity,
    Temperature,
    All,
}

impl KindArg {
    fn kinds(self) -> Vec<AugmentationKind> {
        match self {
            Self::Intensity => vec![AugmentationKind::Intensity],
            Self::Temperature => vec![AugmentationKind::Temperature],
            Self::All => AugmentationKind::ALL.to_vec(),
        }
    }
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Source maps.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub kind: KindArg,
    /// Scaling terms, comma separated. Defaults to the 31-value grid.
    #[arg(long, value_delimiter = ',')]
    pub s: Vec<f64>,
    /// Bin the manifest as INTENSITYxTEMPERATURE bins (e.g. 6x6) and sample.
    #[arg(long)]
    pub bins: Option<String>,
    /// Entries kept per bin when binning.
    #[arg(long, default_value_t = 10)]
    pub per_bin: usize,
    /// Only write the manifest, not the edited maps.
    #[arg(long)]
    pub no_images: bool,
    #[command(flatten)]
    pub transfer: TransferArg,
}

pub fn parse_bins(text: &str) -> anyhow::Result<(usize, usize)> {
    let (a, b) = text
        .split_once(['x', 'X'])
        .with_context(|| format!("bins '{text}' must look like 6x6"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

pub fn augment(a: AugmentArgs, g: &Global, out: &Output) -> anyhow::Result<()> {
    let grid = if a.s.is_empty() {
        default_grid()
    } else {
        a.s.clone()
    };
    let kinds = a.kind.kinds();
    let mut entries = Vec::new();
    let mut clipped_max = 0.0f64;
    for input in &a.inputs {
        let map = load_map(input, a.transfer.transfer)?;
        let baseline = measure_map(&map)?;
        let name = stem(input);
        let ext = if map.range() == Range::Hdr { "hdr" } else { "png" };
        for &kind in &kinds {
            for &s in &grid {
                let spec = AugmentationSpec::new(kind, s)?;
                let edited = spec.apply(&map)?;
                clipped_max = clipped_max.max(edited.clipped_fraction);
                if !a.no_images {
                    let path = out
                        .dir
                        .join("variants")
                        .join(format!("{name}_{}.{ext}", spec.tag()));
                    save_map(&edited.map, &path, a.transfer.transfer)?;
                }
                entries
                    .push(ManifestEntry::measured(name.clone(), spec, &edited.map)?.with_baseline(baseline));
            }
        }
    }
    let manifest = DatasetManifest::new(entries);
    write_manifest(out, "manifest.jsonl", &manifest)?;
    let mut summary = json!({
        "sources": a.inputs.len(),
        "generated": manifest.len(),
        "max_clipped_fraction": clipped_max,
        "manifest": out.dir.join("manifest.jsonl"),
    });
    if let Some(bins) = &a.bins {
        let (ni, nt) = parse_bins(bins)?;
        let binned = bin_and_sample(&manifest, ni, nt, a.per_bin, g.seed)?;
        write_manifest(out, "manifest_binned.jsonl", &binned)?;
        summary["binned"] = json!(binned.len());
        summary["bin_populations"] = json!(binned.bin_populations());
    }
    out.emit(&summary)
}

fn write_manifest(out: &Output, name: &str, manifest: &DatasetManifest) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    manifest.write_jsonl(&mut buf)?;
    out.ensure_dir(&out.dir)?;
    save_bytes(&out.dir.join(name), &buf)
}

#[derive(Args, Debug)]
pub struct ObservationArgs {
    /// Observed LDR panorama, black outside the mask.
    #[arg(long)]
    pub observation: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    /// Estimated map to adapt.
    pub estimate: PathBuf,
    #[command(flatten)]
    pub obs: ObservationArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub transfer: TransferArg,
}

fn region_mean(
    map: &EnvironmentMap,
    mask: &envlight::context::ObservationMask,
) -> anyhow::Result<Option<[f64; 3]>> {
    Ok(if mask.is_empty() {
        None
    } else {
        Some(mean_rgb(map, Some(mask))?)
    })
}

pub fn refine(a: RefineArgs, out: &Output) -> anyhow::Result<()> {
    let t = a.transfer.transfer;
    let estimate = load_map(&a.estimate, t)?.to_ldr();
    let observation = load_map(&a.obs.observation, t)?.to_ldr();
    let mask = load_mask(&a.obs.mask)?;
    let matrix = refinement_matrix(&estimate, &observation, &mask)?;
    let refined = apply_refinement(&estimate, &matrix)?;
    let path = out.path(&a.out);
    save_map(&refined, &path, t)?;
    out.emit(&json!({
        "coverage_fraction": mask.coverage_fraction(),
        "observed_mean": region_mean(&observation, &mask)?,
        "estimate_mean": region_mean(&estimate, &mask)?,
        "refined_mean": region_mean(&refined, &mask)?,
        "refined": path,
    }))
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Candidate maps.
    #[arg(required = true)]
    pub candidates: Vec<PathBuf>,
    #[command(flatten)]
    pub obs: ObservationArgs,
    /// Score the raw candidates without adapting them first.
    #[arg(long)]
    pub no_refine: bool,
    #[command(flatten)]
    pub transfer: TransferArg,
}

pub fn select(a: SelectArgs, g: &Global, out: &Output) -> anyhow::Result<()> {
    let t = a.transfer.transfer;
    let candidates = a
        .candidates
        .iter()
        .map(|p| load_map(p, t).map(|m| m.to_ldr()))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let observation = load_map(&a.obs.observation, t)?.to_ldr();
    let mask = load_mask(&a.obs.mask)?;
    let (chosen, scores) = if a.no_refine {
        select_best_scored(&candidates, &observation, &mask, g.seed)?
    } else {
        let matrices = candidates
            .iter()
            .map(|c| refinement_matrix(c, &observation, &mask))
            .collect::<envlight::Result<Vec<ColorRefinementMatrix>>>()?;
        select_best_refined(&candidates, &matrices, &observation, &mask, g.seed)?
    };
    out.emit(&json!({
        "chosen_index": chosen,
        "chosen": a.candidates[chosen],
        "scores": scores,
        "refined": !a.no_refine,
    }))
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Sphere image side, pixels.
    #[arg(long, default_value_t = RenderConfig::default().resolution)]
    pub resolution: usize,
    /// Width the environment is reduced to before convolution.
    #[arg(long, default_value_t = RenderConfig::default().convolution_width)]
    pub convolution_width: usize,
}

impl RenderArgs {
    pub fn config(&self) -> RenderConfig {
        RenderConfig {
            resolution: self.resolution,
            convolution_width: self.convolution_width,
        }
    }
}

#[derive(Args, Debug)]
pub struct RenderSpheresArgs {
    /// Environment map (.hdr or .png).
    pub input: PathBuf,
    #[command(flatten)]
    pub render: RenderArgs,
    /// Output prefix; writes <prefix>_<material>.hdr.
    #[arg(long)]
    pub prefix: Option<String>,
    #[command(flatten)]
    pub transfer: TransferArg,
}

pub fn render_spheres(a: RenderSpheresArgs, out: &Output) -> anyhow::Result<()> {
    let env = load_map(&a.input, a.transfer.transfer)?;
    let config = a.render.config();
    let prefix = a.prefix.clone().unwrap_or_else(|| stem(&a.input));
    let mut rendered = Vec::new();
    for material in SphereMaterial::standard() {
        let img = render_sphere(&env, material, &config)?;
        let n = img.resolution;
        let map = EnvironmentMap::with_policy(
            n,
            n,
            img.pixels.clone(),
            Range::Hdr,
            envmap::AspectPolicy::Lenient,
        )?;
        let path = out.dir.join(format!("{prefix}_{}.hdr", material.name()));
        save_map(&map, &path, Transfer::Linear)?;
        let covered = img.covered_count().max(1) as f64;
        let mut mean = [0.0; 3];
        for p in img.covered_pixels() {
            for k in 0..3 {
                mean[k] += p[k] / covered;
            }
        }
        rendered.push(json!({ "material": material, "mean_rgb": mean, "image": path }));
    }
    out.emit(&json!({ "resolution": config.resolution, "spheres": rendered }))
}
