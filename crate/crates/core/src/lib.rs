//! Lighting estimation for augmented reality from partial observations.
//!
//! An estimate starts from a few camera frames stitched into an
//! equirectangular panorama ([`context`]). A backend completes the panorama
//! as several LDR candidates, which are colour-adapted to the observation and
//! ranked by palette ([`refinement`]). The bright part of the lighting comes
//! back as a separate sigmoid-compressed map and is added on ([`envmap`]).
//! [`pipeline`] ties these steps together. [`photometry`], [`augmentation`]
//! and [`evaluation`] cover measurement, controlled lighting edits and
//! benchmarking.
//!
//! ```
//! use envlight::envmap::{decompose, recompose, EnvironmentMap, Range};
//!
//! let hdr = EnvironmentMap::uniform(64, 32, [3.0, 2.0, 0.5], Range::Hdr)?;
//! let (ldr, hi) = decompose(&hdr)?;
//! assert_eq!(ldr.max_value(), 1.0);
//! assert!((recompose(&ldr, &hi)?.max_value() - 3.0).abs() < 1e-9);
//! # Ok::<(), envlight::Error>(())
//! ```

pub mod augmentation;
pub mod context;
pub mod envmap;
pub mod error;
pub mod evaluation;
pub mod photometry;
pub mod pipeline;
pub mod refinement;

pub use error::{Error, Result, Stage};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/environment-maps.md")]
mod book_environment_maps {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/photometry.md")]
mod book_photometry {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/observation.md")]
mod book_observation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/refinement.md")]
mod book_refinement {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/augmentation.md")]
mod book_augmentation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
mod book_evaluation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pipeline.md")]
mod book_pipeline {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
