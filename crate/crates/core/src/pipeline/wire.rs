//! JSON bodies of the HTTP backend protocol.
//!
//! Images travel as base64-encoded 8-bit PNG. The transfer function of the
//! colour images is named in the [`ENCODING_HEADER`] request and response
//! header (`linear` or `srgb`). Failures come back with a non-2xx status and
//! an [`ErrorBody`].

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::SyncPayload;
use crate::error::{Error, Result};

pub const COMPLETE_PATH: &str = "/v1/complete";
pub const HIGH_INTENSITY_PATH: &str = "/v1/high_intensity";
pub const ENCODING_HEADER: &str = "x-envlight-encoding";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompleteRequest {
    pub prompt: String,
    pub n: usize,
    pub width: usize,
    pub height: usize,
    pub observation_png_b64: String,
    pub mask_png_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantics_png_b64: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub candidates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighIntensityRequest {
    pub prompt: String,
    pub ldr_png_b64: String,
    /// Chosen candidate and its refinement, for servers that keep the
    /// unrefined candidates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync: Option<SyncPayload>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighIntensityResponse {
    pub hi_png_b64: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    #[serde(default)]
    pub stage: Option<String>,
    pub message: String,
}

impl ErrorBody {
    pub fn from_error(err: &Error) -> Self {
        Self {
            code: err.code().to_owned(),
            stage: err.stage().map(|s| s.as_str().to_owned()),
            message: err.to_string(),
        }
    }
}

pub fn encode_b64(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn decode_b64(text: &str) -> Result<Vec<u8>> {
    STANDARD
        .decode(text)
        .map_err(|e| Error::Protocol(format!("bad base64 payload: {e}")))
}
