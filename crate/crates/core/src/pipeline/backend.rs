use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::remote::RemoteBackend;
use super::SyncPayload;
use crate::context::{ObservationMask, PromptText, SemanticMap};
use crate::envmap::png::{self, BitDepth, Transfer};
use crate::envmap::{decompose, load_hdr, AspectPolicy, EnvironmentMap, HighIntensityMap};
use crate::error::{Error, Result};

/// Inputs to the LDR completion step.
#[derive(Clone, Copy, Debug)]
pub struct CompletionRequest<'a> {
    pub observation: &'a EnvironmentMap,
    pub mask: &'a ObservationMask,
    /// Forwarded as-is; never interpreted by the pipeline.
    pub semantics: Option<&'a SemanticMap>,
    pub prompt: &'a PromptText,
    pub n: usize,
}

impl CompletionRequest<'_> {
    pub fn dims(&self) -> (usize, usize) {
        self.observation.dims()
    }
}

/// Inputs to the high-intensity step.
#[derive(Clone, Copy, Debug)]
pub struct HighIntensityRequest<'a> {
    pub ldr: &'a EnvironmentMap,
    pub prompt: &'a PromptText,
    pub sync: Option<&'a SyncPayload>,
}

/// A backend answer plus the time spent encoding the request and decoding
/// the response. The rest of the call is attributed to inference.
#[derive(Clone, Debug)]
pub struct Reply<T> {
    pub value: T,
    pub upload_ms: f64,
    pub download_ms: f64,
}

impl<T> Reply<T> {
    pub fn local(value: T) -> Self {
        Self {
            value,
            upload_ms: 0.0,
            download_ms: 0.0,
        }
    }
}

/// The generative service behind the two estimation steps.
///
/// Implementations must be callable from several threads at once.
pub trait Backend: Send + Sync {
    /// `n` full LDR maps at the observation's dimensions.
    fn complete_ldr(&self, req: &CompletionRequest<'_>) -> Result<Reply<Vec<EnvironmentMap>>>;

    /// High-intensity map aligned with `req.ldr`.
    fn estimate_high_intensity(&self, req: &HighIntensityRequest<'_>) -> Result<Reply<HighIntensityMap>>;
}

macro_rules! forward_backend {
    ($($t:ty),*) => {$(
        impl<B: Backend + ?Sized> Backend for $t {
            fn complete_ldr(&self, req: &CompletionRequest<'_>) -> Result<Reply<Vec<EnvironmentMap>>> {
                (**self).complete_ldr(req)
            }

            fn estimate_high_intensity(&self, req: &HighIntensityRequest<'_>) -> Result<Reply<HighIntensityMap>> {
                (**self).estimate_high_intensity(req)
            }
        }
    )*};
}

forward_backend!(&B, Box<B>, Arc<B>);

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "at least one completion output is required".into(),
        ));
    }
    Ok(())
}

fn fit(map: EnvironmentMap, dims: (usize, usize)) -> Result<EnvironmentMap> {
    if map.dims() == dims {
        Ok(map)
    } else {
        map.resize(dims.0, dims.1)
    }
}

fn fit_hi(hi: &HighIntensityMap, dims: (usize, usize)) -> Result<HighIntensityMap> {
    if hi.dims() == dims {
        Ok(hi.clone())
    } else {
        hi.resize(dims.0, dims.1)
    }
}

/// Per-channel tint range applied to the oracle's decoy candidates.
pub const TINT_RANGE: (f64, f64) = (0.7, 1.4);

/// Answers from a held-out ground-truth HDR map.
///
/// Candidate 0 is the ground truth's LDR part. Candidates `1..n` are copies
/// with a uniform per-channel tint drawn from [`TINT_RANGE`] and a uniform
/// random horizontal rotation, drawn from a generator seeded with `seed`, so
/// every call returns the same set. The high-intensity answer is always the
/// ground truth's, whatever LDR map is sent.
#[derive(Clone, Debug)]
pub struct OracleBackend {
    ldr: EnvironmentMap,
    hi: HighIntensityMap,
    seed: u64,
}

impl OracleBackend {
    pub fn new(ground_truth: &EnvironmentMap, seed: u64) -> Result<Self> {
        let gt = ground_truth.clone().into_hdr();
        let (ldr, hi) = decompose(&gt)?;
        Ok(Self { ldr, hi, seed })
    }

    pub fn from_hdr_file(path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        Self::new(&load_hdr(path)?, seed)
    }

    pub fn candidates(&self, n: usize, dims: (usize, usize)) -> Result<Vec<EnvironmentMap>> {
        check_n(n)?;
        let base = fit(self.ldr.clone(), dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(n);
        out.push(base.clone());
        for _ in 1..n {
            let tint: [f64; 3] = [0; 3].map(|_| rng.gen_range(TINT_RANGE.0..=TINT_RANGE.1));
            let shift = rng.gen_range(0..dims.0) as isize;
            let decoy = base
                .rotate_columns(shift)
                .map_pixels(|p| [0, 1, 2].map(|c| (p[c] * tint[c]).min(1.0)));
            out.push(decoy);
        }
        Ok(out)
    }

    pub fn high_intensity(&self, dims: (usize, usize)) -> Result<HighIntensityMap> {
        fit_hi(&self.hi, dims)
    }
}

impl Backend for OracleBackend {
    fn complete_ldr(&self, req: &CompletionRequest<'_>) -> Result<Reply<Vec<EnvironmentMap>>> {
        Ok(Reply::local(self.candidates(req.n, req.dims())?))
    }

    fn estimate_high_intensity(&self, req: &HighIntensityRequest<'_>) -> Result<Reply<HighIntensityMap>> {
        Ok(Reply::local(self.high_intensity(req.ldr.dims())?))
    }
}

const FIXTURE_HI: &str = "high_intensity.png";

/// Replays answers recorded in a directory: `candidate_*.png` files in name
/// order and one `high_intensity.png`.
#[derive(Clone, Debug)]
pub struct FixtureBackend {
    dir: PathBuf,
    transfer: Transfer,
}

impl FixtureBackend {
    pub fn new(dir: impl Into<PathBuf>, transfer: Transfer) -> Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::InvalidParameter(format!(
                "fixture directory {} does not exist",
                dir.display()
            )));
        }
        Ok(Self { dir, transfer })
    }

    /// Writes a fixture that [`FixtureBackend`] can replay.
    pub fn record(
        dir: impl AsRef<Path>,
        candidates: &[EnvironmentMap],
        hi: &HighIntensityMap,
        transfer: Transfer,
    ) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (i, c) in candidates.iter().enumerate() {
            png::save_ldr(c, dir.join(format!("candidate_{i:03}.png")), transfer)?;
        }
        png::save_high_intensity(hi, dir.join(FIXTURE_HI), BitDepth::Sixteen)
    }

    fn candidate_paths(&self) -> Result<Vec<PathBuf>> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("candidate") && n.ends_with(".png"))
            })
            .collect();
        paths.sort();
        Ok(paths)
    }
}

impl Backend for FixtureBackend {
    fn complete_ldr(&self, req: &CompletionRequest<'_>) -> Result<Reply<Vec<EnvironmentMap>>> {
        check_n(req.n)?;
        let paths = self.candidate_paths()?;
        if paths.len() < req.n {
            return Err(Error::Protocol(format!(
                "fixture holds {} candidates, {} requested",
                paths.len(),
                req.n
            )));
        }
        let start = Instant::now();
        let maps = paths[..req.n]
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p)?;
                fit(
                    png::decode_ldr(&bytes, self.transfer, AspectPolicy::Strict)?,
                    req.dims(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Reply {
            value: maps,
            upload_ms: 0.0,
            download_ms: millis(start.elapsed()),
        })
    }

    fn estimate_high_intensity(&self, req: &HighIntensityRequest<'_>) -> Result<Reply<HighIntensityMap>> {
        let start = Instant::now();
        let hi = png::load_high_intensity(self.dir.join(FIXTURE_HI))?;
        let hi = fit_hi(&hi, req.ldr.dims())?;
        Ok(Reply {
            value: hi,
            upload_ms: 0.0,
            download_ms: millis(start.elapsed()),
        })
    }
}

/// Passes every image through the 8-bit PNG codec used on the wire, so an
/// in-process backend sees the same quantisation as a remote one.
#[derive(Clone, Debug)]
pub struct Transported<B> {
    inner: B,
    transfer: Transfer,
}

impl<B: Backend> Transported<B> {
    pub fn new(inner: B, transfer: Transfer) -> Self {
        Self { inner, transfer }
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: Backend> Backend for Transported<B> {
    fn complete_ldr(&self, req: &CompletionRequest<'_>) -> Result<Reply<Vec<EnvironmentMap>>> {
        let start = Instant::now();
        let obs = png::decode_ldr(
            &png::encode_ldr(req.observation, self.transfer)?,
            self.transfer,
            AspectPolicy::Strict,
        )?;
        let upload_ms = millis(start.elapsed());
        let sent = CompletionRequest {
            observation: &obs,
            ..*req
        };
        let mut reply = self.inner.complete_ldr(&sent)?;
        let start = Instant::now();
        reply.value = reply
            .value
            .iter()
            .map(|c| {
                png::decode_ldr(
                    &png::encode_ldr(c, self.transfer)?,
                    self.transfer,
                    AspectPolicy::Strict,
                )
            })
            .collect::<Result<_>>()?;
        reply.upload_ms += upload_ms;
        reply.download_ms += millis(start.elapsed());
        Ok(reply)
    }

    fn estimate_high_intensity(&self, req: &HighIntensityRequest<'_>) -> Result<Reply<HighIntensityMap>> {
        let start = Instant::now();
        let ldr = png::decode_ldr(
            &png::encode_ldr(req.ldr, self.transfer)?,
            self.transfer,
            AspectPolicy::Strict,
        )?;
        let upload_ms = millis(start.elapsed());
        let mut reply = self
            .inner
            .estimate_high_intensity(&HighIntensityRequest { ldr: &ldr, ..*req })?;
        let start = Instant::now();
        reply.value =
            png::decode_high_intensity(&png::encode_high_intensity(&reply.value, BitDepth::Eight)?)?;
        reply.upload_ms += upload_ms;
        reply.download_ms += millis(start.elapsed());
        Ok(reply)
    }
}

/// Counts calls into the wrapped backend.
#[derive(Debug, Default)]
pub struct CountingBackend<B> {
    inner: B,
    completions: AtomicUsize,
    high_intensity: AtomicUsize,
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            completions: AtomicUsize::new(0),
            high_intensity: AtomicUsize::new(0),
        }
    }

    /// `(complete_ldr calls, estimate_high_intensity calls)`.
    pub fn counts(&self) -> (usize, usize) {
        (
            self.completions.load(Ordering::SeqCst),
            self.high_intensity.load(Ordering::SeqCst),
        )
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn complete_ldr(&self, req: &CompletionRequest<'_>) -> Result<Reply<Vec<EnvironmentMap>>> {
        self.completions.fetch_add(1, Ordering::SeqCst);
        self.inner.complete_ldr(req)
    }

    fn estimate_high_intensity(&self, req: &HighIntensityRequest<'_>) -> Result<Reply<HighIntensityMap>> {
        self.high_intensity.fetch_add(1, Ordering::SeqCst);
        self.inner.estimate_high_intensity(req)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Oracle,
    Fixture,
}

pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

/// Where estimation requests go.
///
/// `remote` needs an endpoint URL. `oracle` needs `fixture` pointing at a
/// ground-truth `.hdr` file. `fixture` needs a directory of recorded answers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
    pub timeout_ms: u64,
    /// Transfer function of 8-bit images on the wire and in fixtures.
    #[serde(default)]
    pub transfer: Transfer,
}

impl BackendDescriptor {
    pub fn remote(endpoint: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            fixture: None,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            transfer: Transfer::default(),
        }
    }

    pub fn oracle(ground_truth: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Oracle,
            endpoint: None,
            fixture: Some(ground_truth.into()),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            transfer: Transfer::default(),
        }
    }

    pub fn fixture(dir: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Fixture,
            ..Self::oracle(dir)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(Error::InvalidParameter("backend timeout must be positive".into()));
        }
        match self.kind {
            BackendKind::Remote if self.endpoint.is_none() => Err(Error::InvalidParameter(
                "remote backend requires an endpoint".into(),
            )),
            BackendKind::Oracle | BackendKind::Fixture if self.fixture.is_none() => {
                Err(Error::InvalidParameter(
                    format!("{:?} backend requires a fixture path", self.kind).to_lowercase(),
                ))
            }
            _ => Ok(()),
        }
    }

    /// Builds the backend. `seed` drives the oracle's decoys.
    pub fn connect(&self, seed: u64) -> Result<Box<dyn Backend>> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Remote => Box::new(RemoteBackend::new(
                self.endpoint.as_deref().unwrap_or_default(),
                Duration::from_millis(self.timeout_ms),
                self.transfer,
            )?),
            BackendKind::Oracle => Box::new(OracleBackend::from_hdr_file(
                self.fixture.as_ref().expect("validated"),
                seed,
            )?),
            BackendKind::Fixture => Box::new(FixtureBackend::new(
                self.fixture.clone().expect("validated"),
                self.transfer,
            )?),
        })
    }
}

pub(crate) fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}
