//! Prediction records shared by generation, baselines and evaluation.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedHeadline {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub story_id: String,
    /// Best first.
    pub candidates: Vec<PredictedHeadline>,
    /// Article weights at every decoding step of the best candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_weights: Option<Vec<Vec<f64>>>,
}

impl Prediction {
    pub fn single(story_id: impl Into<String>, text: impl Into<String>) -> Self {
        Prediction {
            story_id: story_id.into(),
            candidates: vec![PredictedHeadline {
                text: text.into(),
                logprob: None,
            }],
            attention_weights: None,
        }
    }

    pub fn best(&self) -> Option<&str> {
        self.candidates.first().map(|c| c.text.as_str())
    }
}
