use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backend::{millis, Backend, CompletionRequest, HighIntensityRequest};
use crate::context::{build_prompt_p1, build_prompt_p2, ObservationMask, PromptText, SemanticMap};
use crate::envmap::{recompose, EnvironmentMap, HighIntensityMap, Range};
use crate::error::{Error, Result, Stage};
use crate::photometry::{
    classify_ambient, measure, AmbientLabels, AmbientLightReading, IntensityLabel, TemperatureLabel,
};
use crate::refinement::{apply_refinement, refinement_matrix, select_best_refined, ColorRefinementMatrix};

pub const DEFAULT_OUTPUTS: usize = 5;

/// Everything the device knows when it asks for an estimate.
#[derive(Clone, Debug)]
pub struct EstimationRequest {
    /// Stitched camera frames, black outside `mask`.
    pub observation: EnvironmentMap,
    pub mask: ObservationMask,
    pub semantics: Option<SemanticMap>,
    /// Light-sensor reading. When absent the labels are measured from the
    /// observed pixels.
    pub ambient: Option<AmbientLightReading>,
    pub n_outputs: usize,
    /// Seeds palette extraction during selection.
    pub seed: u64,
}

impl EstimationRequest {
    pub fn new(observation: EnvironmentMap, mask: ObservationMask) -> Self {
        Self {
            observation,
            mask,
            semantics: None,
            ambient: None,
            n_outputs: DEFAULT_OUTPUTS,
            seed: 0,
        }
    }

    pub fn with_semantics(mut self, semantics: SemanticMap) -> Self {
        self.semantics = Some(semantics);
        self
    }

    pub fn with_ambient(mut self, reading: AmbientLightReading) -> Self {
        self.ambient = Some(reading);
        self
    }

    pub fn with_outputs(mut self, n: usize) -> Self {
        self.n_outputs = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.observation.is_hdr() {
            return Err(Error::WrongRange {
                expected: Range::Ldr.name(),
            });
        }
        self.observation.ensure_same_dims(self.mask.dims())?;
        if let Some(s) = &self.semantics {
            self.observation.ensure_same_dims(s.dims())?;
        }
        if self.n_outputs == 0 {
            return Err(Error::InvalidParameter("n_outputs must be at least 1".into()));
        }
        Ok(())
    }

    /// Sensor labels if present, else measured over the observed region.
    /// With nothing observed and no sensor the labels are neutral.
    pub fn labels(&self) -> Result<AmbientLabels> {
        if let Some(r) = &self.ambient {
            return Ok(classify_ambient(r));
        }
        if self.mask.is_empty() {
            log::warn!("no observed pixels and no sensor reading; using neutral ambient labels");
            return Ok(AmbientLabels {
                intensity: IntensityLabel::Neutral,
                temperature: TemperatureLabel::Neutral,
            });
        }
        match measure(&self.observation, Some(&self.mask)) {
            Ok(r) => Ok(classify_ambient(&r)),
            Err(Error::Degenerate(msg)) => {
                // Observed region is pure black.
                log::warn!("{msg}; treating observation as dark and neutral");
                Ok(AmbientLabels {
                    intensity: IntensityLabel::Dark,
                    temperature: TemperatureLabel::Neutral,
                })
            }
            Err(e) => Err(e),
        }
    }
}

/// Wall-clock milliseconds per stage. Every stage is always present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StageTimings(BTreeMap<Stage, f64>);

impl Default for StageTimings {
    fn default() -> Self {
        Self(Stage::ALL.iter().map(|&s| (s, 0.0)).collect())
    }
}

impl StageTimings {
    pub fn get(&self, stage: Stage) -> f64 {
        self.0.get(&stage).copied().unwrap_or(0.0)
    }

    pub fn add(&mut self, stage: Stage, ms: f64) {
        *self.0.entry(stage).or_insert(0.0) += ms.max(0.0);
    }

    pub fn iter(&self) -> impl Iterator<Item = (Stage, f64)> + '_ {
        self.0.iter().map(|(&s, &v)| (s, v))
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }

    /// Total without the two inference stages.
    pub fn excluding_inference(&self) -> f64 {
        self.total() - self.get(Stage::LdrCompletion) - self.get(Stage::HiEstimation)
    }

    /// All stages set to zero, for reproducible output.
    pub fn zeroed() -> Self {
        Self::default()
    }
}

/// What the device sends back before high-intensity estimation: which
/// candidate won and how it was recoloured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncPayload {
    pub chosen_index: usize,
    pub matrix: ColorRefinementMatrix,
}

/// A finished estimate. Immutable; [`EstimationResult::refresh`] builds a new
/// one.
///
/// The unrefined candidates are kept (shared between refreshed results) so
/// later frames can be adapted without another backend call. Only the chosen
/// candidate is refined eagerly; the others are refined on first access to
/// [`EstimationResult::candidates`]. Memory is `n + 2` LDR maps plus one
/// high-intensity map, and `2n + 1` once all candidates are requested.
#[derive(Clone, Debug)]
pub struct EstimationResult {
    hdr: EnvironmentMap,
    chosen_index: usize,
    chosen: EnvironmentMap,
    refined: OnceLock<Vec<EnvironmentMap>>,
    matrices: Vec<ColorRefinementMatrix>,
    scores: Vec<f64>,
    hi_map: Arc<HighIntensityMap>,
    labels: AmbientLabels,
    prompt: PromptText,
    timings: StageTimings,
    raw: Arc<Vec<EnvironmentMap>>,
    seed: u64,
}

impl EstimationResult {
    pub fn hdr(&self) -> &EnvironmentMap {
        &self.hdr
    }

    pub fn chosen_index(&self) -> usize {
        self.chosen_index
    }

    /// Refined candidates.
    pub fn candidates(&self) -> &[EnvironmentMap] {
        self.refined
            .get_or_init(|| refine_all(&self.raw, &self.matrices).expect("matrices match their candidates"))
    }

    /// The refined winning candidate.
    pub fn chosen(&self) -> &EnvironmentMap {
        &self.chosen
    }

    /// Refinement applied to each candidate.
    pub fn matrices(&self) -> &[ColorRefinementMatrix] {
        &self.matrices
    }

    /// Palette similarity of each refined candidate to the observation.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn hi_map(&self) -> &HighIntensityMap {
        &self.hi_map
    }

    pub fn labels(&self) -> AmbientLabels {
        self.labels
    }

    pub fn prompt(&self) -> &PromptText {
        &self.prompt
    }

    pub fn timings(&self) -> &StageTimings {
        &self.timings
    }

    /// Candidates as returned by the backend.
    pub fn raw_candidates(&self) -> &[EnvironmentMap] {
        &self.raw
    }

    pub fn sync_payload(&self) -> SyncPayload {
        SyncPayload {
            chosen_index: self.chosen_index,
            matrix: self.matrices[self.chosen_index].clone(),
        }
    }

    /// Re-adapts the cached candidates to a new observation and recomposes
    /// with the cached high-intensity map. Never calls the backend.
    pub fn refresh(&self, observation: &EnvironmentMap, mask: &ObservationMask) -> Result<EstimationResult> {
        refresh(self, observation, mask)
    }
}

/// Where an estimate stopped, with whatever had been computed.
#[derive(Debug)]
pub struct EstimationFailure {
    pub error: Error,
    pub partial: Option<PartialResult>,
}

/// Refined candidates and selection, when the failure came after them.
#[derive(Clone, Debug)]
pub struct PartialResult {
    pub candidates: Vec<EnvironmentMap>,
    pub chosen_index: usize,
    pub scores: Vec<f64>,
    pub timings: StageTimings,
}

impl fmt::Display for EstimationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for EstimationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<EstimationFailure> for Error {
    fn from(f: EstimationFailure) -> Self {
        f.error
    }
}

fn fail(stage: Stage) -> impl FnOnce(Error) -> EstimationFailure {
    move |e| EstimationFailure {
        error: e.at(stage),
        partial: None,
    }
}

struct Adapted {
    chosen_map: EnvironmentMap,
    matrices: Vec<ColorRefinementMatrix>,
    scores: Vec<f64>,
    chosen: usize,
}

fn adapt(
    raw: &[EnvironmentMap],
    observation: &EnvironmentMap,
    mask: &ObservationMask,
    seed: u64,
) -> Result<Adapted> {
    let matrices = raw
        .par_iter()
        .map(|c| refinement_matrix(c, observation, mask))
        .collect::<Result<Vec<_>>>()?;
    let (chosen, scores) = if mask.is_empty() {
        // Nothing to compare against.
        (0, vec![0.0; raw.len()])
    } else {
        select_best_refined(raw, &matrices, observation, mask, seed)?
    };
    Ok(Adapted {
        chosen_map: apply_refinement(&raw[chosen], &matrices[chosen])?,
        matrices,
        scores,
        chosen,
    })
}

fn refine_all(raw: &[EnvironmentMap], matrices: &[ColorRefinementMatrix]) -> Result<Vec<EnvironmentMap>> {
    raw.par_iter()
        .zip(matrices)
        .map(|(c, m)| apply_refinement(c, m))
        .collect()
}

/// Runs the two-step estimate: complete the LDR panorama `n` times, adapt
/// every candidate to the observation, keep the best match, add its
/// high-intensity map.
///
/// Errors carry the stage they occurred in. Failures after selection come
/// with the refined candidates attached.
pub fn estimate<B: Backend + ?Sized>(
    request: &EstimationRequest,
    backend: &B,
) -> std::result::Result<EstimationResult, EstimationFailure> {
    let mut timings = StageTimings::default();

    let t = Instant::now();
    request.validate().map_err(fail(Stage::DataPreparation))?;
    let labels = request.labels().map_err(fail(Stage::DataPreparation))?;
    let p1 = build_prompt_p1(&labels);
    let p2 = build_prompt_p2();
    timings.add(Stage::DataPreparation, millis(t.elapsed()));

    let dims = request.observation.dims();
    let t = Instant::now();
    let reply = backend
        .complete_ldr(&CompletionRequest {
            observation: &request.observation,
            mask: &request.mask,
            semantics: request.semantics.as_ref(),
            prompt: &p1,
            n: request.n_outputs,
        })
        .map_err(fail(Stage::LdrCompletion))?;
    let total = millis(t.elapsed());
    timings.add(Stage::Offload, reply.upload_ms);
    timings.add(Stage::LdrRetrieval, reply.download_ms);
    timings.add(Stage::LdrCompletion, total - reply.upload_ms - reply.download_ms);
    let raw = reply.value;
    check_candidates(&raw, request.n_outputs, dims).map_err(fail(Stage::LdrRetrieval))?;

    let t = Instant::now();
    let adapted =
        adapt(&raw, &request.observation, &request.mask, request.seed).map_err(fail(Stage::Refinement))?;
    timings.add(Stage::Refinement, millis(t.elapsed()));

    let partial = |error: Error, timings: &StageTimings| EstimationFailure {
        error,
        partial: Some(PartialResult {
            candidates: refine_all(&raw, &adapted.matrices).unwrap_or_default(),
            chosen_index: adapted.chosen,
            scores: adapted.scores.clone(),
            timings: timings.clone(),
        }),
    };

    let t = Instant::now();
    let sync = SyncPayload {
        chosen_index: adapted.chosen,
        matrix: adapted.matrices[adapted.chosen].clone(),
    };
    timings.add(Stage::Sync, millis(t.elapsed()));

    let t = Instant::now();
    let reply = backend
        .estimate_high_intensity(&HighIntensityRequest {
            ldr: &adapted.chosen_map,
            prompt: &p2,
            sync: Some(&sync),
        })
        .map_err(|e| partial(e.at(Stage::HiEstimation), &timings))?;
    let total = millis(t.elapsed());
    timings.add(Stage::Sync, reply.upload_ms);
    timings.add(Stage::HiEstimation, total - reply.upload_ms - reply.download_ms);

    let t = Instant::now();
    let hi_map = reply.value;
    if hi_map.dims() != dims {
        return Err(partial(
            Error::Protocol(format!(
                "high-intensity map is {:?}, expected {dims:?}",
                hi_map.dims()
            ))
            .at(Stage::HiRetrieval),
            &timings,
        ));
    }
    let hdr =
        recompose(&adapted.chosen_map, &hi_map).map_err(|e| partial(e.at(Stage::HiRetrieval), &timings))?;
    timings.add(Stage::HiRetrieval, reply.download_ms + millis(t.elapsed()));

    Ok(EstimationResult {
        hdr,
        chosen_index: adapted.chosen,
        chosen: adapted.chosen_map,
        refined: OnceLock::new(),
        matrices: adapted.matrices,
        scores: adapted.scores,
        hi_map: Arc::new(hi_map),
        labels,
        prompt: p1,
        timings,
        raw: Arc::new(raw),
        seed: request.seed,
    })
}

fn check_candidates(raw: &[EnvironmentMap], n: usize, dims: (usize, usize)) -> Result<()> {
    if raw.len() != n {
        return Err(Error::Protocol(format!(
            "requested {n} candidates, received {}",
            raw.len()
        )));
    }
    for (i, c) in raw.iter().enumerate() {
        if c.dims() != dims {
            return Err(Error::Protocol(format!(
                "candidate {i} is {:?}, expected {dims:?}",
                c.dims()
            )));
        }
        if c.is_hdr() {
            return Err(Error::Protocol(format!("candidate {i} is not an LDR map")));
        }
    }
    Ok(())
}

/// See [`EstimationResult::refresh`].
pub fn refresh(
    result: &EstimationResult,
    observation: &EnvironmentMap,
    mask: &ObservationMask,
) -> Result<EstimationResult> {
    let mut timings = StageTimings::default();
    let t = Instant::now();
    let dims = result.raw[0].dims();
    observation
        .ensure_same_dims(dims)
        .map_err(|e| e.at(Stage::DataPreparation))?;
    if mask.dims() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            found: mask.dims(),
        }
        .at(Stage::DataPreparation));
    }
    if observation.is_hdr() {
        return Err(Error::WrongRange {
            expected: Range::Ldr.name(),
        }
        .at(Stage::DataPreparation));
    }
    timings.add(Stage::DataPreparation, millis(t.elapsed()));

    let t = Instant::now();
    let adapted = adapt(&result.raw, observation, mask, result.seed).map_err(|e| e.at(Stage::Refinement))?;
    timings.add(Stage::Refinement, millis(t.elapsed()));

    let t = Instant::now();
    let hdr = recompose(&adapted.chosen_map, &result.hi_map).map_err(|e| e.at(Stage::HiRetrieval))?;
    timings.add(Stage::HiRetrieval, millis(t.elapsed()));

    Ok(EstimationResult {
        hdr,
        chosen_index: adapted.chosen,
        chosen: adapted.chosen_map,
        refined: OnceLock::new(),
        matrices: adapted.matrices,
        scores: adapted.scores,
        hi_map: Arc::clone(&result.hi_map),
        labels: result.labels,
        prompt: result.prompt.clone(),
        timings,
        raw: Arc::clone(&result.raw),
        seed: result.seed,
    })
}
