//! Sphere rendering, image metrics and the two evaluation protocols.

mod metrics;
mod protocol;
mod sphere;

pub use self::metrics::{
    angular_error, ldr_rmse, rmse, si_rmse, si_rmse_detailed, ScaleInvariant, REMAP_PERCENTILES,
};
pub use self::protocol::{
    entry_mask, entry_seed, run_robustness, run_three_sphere, BinSummary, EntryRecord, Estimator,
    MaterialRecord, MaterialSummary, MetricReport, ProtocolInput, ProtocolRun, RefinementMode,
    RobustnessConfig, RobustnessItem, ThreeSphereConfig, ThreeSphereEntry,
};
pub use self::sphere::{
    reflect_view, render_sphere, RenderConfig, SphereImage, SphereMaterial, DEFAULT_CONVOLUTION_WIDTH,
    DEFAULT_PHONG_EXPONENT, DEFAULT_RESOLUTION, MIN_RESOLUTION,
};
