use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage a failure is attributed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    DataPreparation,
    Offload,
    LdrCompletion,
    LdrRetrieval,
    Refinement,
    Sync,
    HiEstimation,
    HiRetrieval,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::DataPreparation,
        Stage::Offload,
        Stage::LdrCompletion,
        Stage::LdrRetrieval,
        Stage::Refinement,
        Stage::Sync,
        Stage::HiEstimation,
        Stage::HiRetrieval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::DataPreparation => "data_preparation",
            Stage::Offload => "offload",
            Stage::LdrCompletion => "ldr_completion",
            Stage::LdrRetrieval => "ldr_retrieval",
            Stage::Refinement => "refinement",
            Stage::Sync => "sync",
            Stage::HiEstimation => "hi_estimation",
            Stage::HiRetrieval => "hi_retrieval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated scanline data at row {row}")]
    TruncatedScanline { row: usize },

    #[error("unsupported image: {0}")]
    UnsupportedImage(String),

    #[error("invalid aspect {width}x{height}: equirectangular maps must be 2:1")]
    InvalidAspect { width: usize, height: usize },

    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid pixel value {value} at index {index}")]
    InvalidValue { index: usize, value: f64 },

    #[error("value {0} lies outside the function domain")]
    Domain(f64),

    #[error("sigmoid value {0} is saturated (>= 1)")]
    Saturated(f64),

    #[error("expected {expected} map")]
    WrongRange { expected: &'static str },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty mask")]
    EmptyMask,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "out of locus: chromaticity is {duv:.4} from the Planckian locus (nearest {nearest_kelvin:.0} K)"
    )]
    OutOfLocus { nearest_kelvin: f64, duv: f64 },

    #[error("image codec error: {0}")]
    Codec(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("backend timed out after {0} ms")]
    Timeout(u64),

    #[error("backend transport error: {0}")]
    Transport(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Error {
        match self {
            tagged @ Error::Stage { .. } => tagged,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Stage tag, if the error was raised inside the estimation pipeline.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// Short machine-readable code used in error records.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::MalformedHeader(_) => "malformed_header",
            Error::TruncatedScanline { .. } => "truncated_scanline",
            Error::UnsupportedImage(_) => "unsupported_image",
            Error::InvalidAspect { .. } => "invalid_aspect",
            Error::InvalidDimensions { .. } => "invalid_dimensions",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidValue { .. } => "invalid_value",
            Error::Domain(_) => "domain",
            Error::Saturated(_) => "saturated",
            Error::WrongRange { .. } => "wrong_range",
            Error::Degenerate(_) => "degenerate",
            Error::EmptyMask => "empty_mask",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::OutOfLocus { .. } => "out_of_locus",
            Error::Codec(_) => "codec",
            Error::Protocol(_) => "protocol",
            Error::Timeout(_) => "timeout",
            Error::Transport(_) => "transport",
            Error::Stage { source, .. } => source.code(),
        }
    }
}

impl From<image::ImageError> for Error {
    fn from(err: image::ImageError) -> Self {
        match err {
            image::ImageError::IoError(io) => Error::Io(io),
            image::ImageError::Unsupported(u) => Error::UnsupportedImage(u.to_string()),
            other => Error::Codec(other.to_string()),
        }
    }
}
