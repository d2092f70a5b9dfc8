//! Colour adaptation of completed maps to the live observation, and
//! selection among completion candidates by palette similarity.

mod multipliers;
mod palette;

pub use self::multipliers::{
    apply_refinement, build_refinement_matrix, global_multiplier, local_multipliers, refine, refined_region,
    refinement_matrix, ColorRefinementMatrix, PatchGrid, DEFAULT_GRID, MULTIPLIER_BOUNDS,
};
pub use self::palette::{
    extract_palette, palette_of_region, palette_similarity, select_best, select_best_refined,
    select_best_scored, Palette, PALETTE_SIZE,
};
