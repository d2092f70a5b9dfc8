use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use envlight::context::{ObservationMask, ViewSampling, ViewSpec};
use envlight::envmap::{load_hdr, load_ldr, save_hdr, save_ldr, EnvironmentMap, Transfer};

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase()
}

/// Reads a map by extension: `.hdr` as Radiance HDR, `.png` as 8-bit LDR.
pub fn load_map(path: &Path, transfer: Transfer) -> anyhow::Result<EnvironmentMap> {
    let map = match extension(path).as_str() {
        "hdr" | "pic" => load_hdr(path),
        "png" => load_ldr(path, transfer),
        other => bail!(
            "{}: unsupported map format '{other}' (expected .hdr or .png)",
            path.display()
        ),
    };
    map.with_context(|| format!("reading {}", path.display()))
}

pub fn save_map(map: &EnvironmentMap, path: &Path, transfer: Transfer) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let saved = match extension(path).as_str() {
        "hdr" | "pic" => save_hdr(map, path),
        "png" => save_ldr(map, path, transfer),
        other => bail!(
            "{}: unsupported map format '{other}' (expected .hdr or .png)",
            path.display()
        ),
    };
    saved.with_context(|| format!("writing {}", path.display()))
}

pub fn load_mask(path: &Path) -> anyhow::Result<ObservationMask> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ObservationMask::from_png(&bytes).with_context(|| format!("decoding mask {}", path.display()))
}

pub fn save_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// File stem for naming derived outputs.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("map")
        .to_owned()
}

fn parse_range<T: FromStr + Copy>(text: &str) -> anyhow::Result<RangeInclusive<T>> {
    let parse = |s: &str| {
        s.trim()
            .parse::<T>()
            .map_err(|_| anyhow!("invalid number '{}'", s.trim()))
    };
    match text
        .split_once("..")
        .or_else(|| text.split_once('-').filter(|(a, _)| !a.is_empty()))
    {
        Some((a, b)) => Ok(parse(a)?..=parse(b.trim_start_matches('='))?),
        None => {
            let v = parse(text)?;
            Ok(v..=v)
        }
    }
}

/// Parses view-sampling shorthand such as `75deg x1`, `60-120deg x1-5` or
/// `90deg x3 pitch-10..10 aspect1.5`. Unspecified parts keep their defaults.
pub fn parse_views(text: &str) -> anyhow::Result<ViewSampling> {
    let mut s = ViewSampling::default();
    for token in text.split_whitespace() {
        if let Some(fov) = token.strip_suffix("deg") {
            s.fov = parse_range(fov)?;
        } else if let Some(count) = token.strip_prefix('x') {
            s.count = parse_range(count)?;
        } else if let Some(pitch) = token.strip_prefix("pitch") {
            s.pitch = parse_range(pitch)?;
        } else if let Some(aspect) = token.strip_prefix("aspect") {
            s.aspect = aspect.parse().map_err(|_| anyhow!("invalid aspect '{aspect}'"))?;
        } else {
            bail!("unrecognised view token '{token}' (expected e.g. '75deg x1')");
        }
    }
    Ok(s)
}

/// Parses `yaw,pitch,hfov[,aspect[,roll]]` in degrees.
pub fn parse_view(text: &str) -> anyhow::Result<ViewSpec> {
    let v: Vec<f64> = text
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("invalid number '{p}' in view '{text}'"))
        })
        .collect::<anyhow::Result<_>>()?;
    let spec = match v.as_slice() {
        [yaw, pitch, hfov] => ViewSpec::new(*yaw, *pitch, *hfov, 4.0 / 3.0)?,
        [yaw, pitch, hfov, aspect] => ViewSpec::new(*yaw, *pitch, *hfov, *aspect)?,
        [yaw, pitch, hfov, aspect, roll] => ViewSpec::new(*yaw, *pitch, *hfov, *aspect)?.with_roll(*roll),
        _ => bail!("view '{text}' must be yaw,pitch,hfov[,aspect[,roll]]"),
    };
    Ok(spec)
}
