//! Partial observations: view frusta, masks, stitching, semantic labels and
//! generation prompts.

mod mask;
mod prompt;
mod semantic;
mod stitch;
mod view;

pub use self::mask::{apply_mask, compose_masks, ObservationMask};
pub use self::prompt::{build_prompt_p1, build_prompt_p2, PromptText, HIGH_INTENSITY_PROMPT};
pub use self::semantic::{palette, SemanticMap, NUM_CLASSES, UNLABELED};
pub use self::stitch::{stitch_observation, Stitcher};
pub use self::view::{project_view_mask, sample_random_views, ViewSampling, ViewSpec};

pub(crate) use self::view::sample_views_with;
