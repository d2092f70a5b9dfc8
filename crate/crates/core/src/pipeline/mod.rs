//! Two-step estimation behind a backend abstraction.
//!
//! The device prepares the context, a [`Backend`] completes the panorama and
//! estimates its bright regions, and the device adapts and selects among the
//! completions in between. [`OracleBackend`] answers from ground truth for
//! tests and benchmarks; [`RemoteBackend`] speaks the HTTP protocol in
//! [`wire`], which [`MockServer`] serves.

mod backend;
mod estimate;
mod mock;
mod remote;
pub mod wire;

pub use self::backend::{
    Backend, BackendDescriptor, BackendKind, CompletionRequest, CountingBackend, FixtureBackend,
    HighIntensityRequest, OracleBackend, Reply, Transported, DEFAULT_TIMEOUT_MS, TINT_RANGE,
};
pub use self::estimate::{
    estimate, refresh, EstimationFailure, EstimationRequest, EstimationResult, PartialResult, StageTimings,
    SyncPayload, DEFAULT_OUTPUTS,
};
pub use self::mock::MockServer;
pub use self::remote::RemoteBackend;
