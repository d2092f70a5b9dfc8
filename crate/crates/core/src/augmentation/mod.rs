//! Controlled lighting edits for robustness data, dataset balancing and
//! training-pair preparation.

mod edit;
mod manifest;
mod training;

pub use self::edit::{
    default_grid, generate_variants, random_rotation, scale_intensity, shift_temperature, AugmentationKind,
    AugmentationSpec, Edited, GRID_STEP, SCALE_RANGE,
};
pub use self::manifest::{
    bin_and_sample, measure_map, DatasetManifest, ManifestEntry, Measurement, RangeFilter,
};
pub use self::training::{make_training_pair, TrainingPair};
