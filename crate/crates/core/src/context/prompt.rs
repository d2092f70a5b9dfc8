use std::fmt;

use serde::{Deserialize, Serialize};

use crate::photometry::AmbientLabels;

/// Conditioning text for one of the two generation passes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptText(String);

impl PromptText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for PromptText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<String> for PromptText {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl AsRef<str> for PromptText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

pub const HIGH_INTENSITY_PROMPT: &str = "A grayscale panoramic image describing the bright spots of an indoor room. Brighter spots get more bright color. Regions without light sources should stay pure black.";

/// Prompt for LDR completion, conditioned on the ambient labels.
pub fn build_prompt_p1(labels: &AmbientLabels) -> PromptText {
    PromptText(format!(
        "A panoramic photo of an indoor room. The room is in a {} lighting condition. The room has a {} ambient color.",
        labels.intensity.word(),
        labels.temperature.word()
    ))
}

/// Prompt for high-intensity estimation. Fixed text.
pub fn build_prompt_p2() -> PromptText {
    PromptText(HIGH_INTENSITY_PROMPT.to_owned())
}
