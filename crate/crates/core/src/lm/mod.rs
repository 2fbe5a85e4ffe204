//! Language-model access for the synthesis stages.
//!
//! Every stage talks to a [`LanguageModel`]. The live backend posts to an
//! OpenAI-compatible chat-completions endpoint; the fixture backend replays
//! stored completions keyed by a hash of the prompt, or records them.

mod fixture;
mod http;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixture::{fixture_key, FixtureBackend, FixtureMode, FixtureStore, ReplayPolicy};
pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Translate,
    Sketch,
    SynthesizeCode,
    Score,
    Canonicalize,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Translate,
        Stage::Sketch,
        Stage::SynthesizeCode,
        Stage::Score,
        Stage::Canonicalize,
    ];

    /// Tag used in fixture keys and directory names.
    pub fn tag(self) -> &'static str {
        match self {
            Stage::Translate => "translate",
            Stage::Sketch => "sketch",
            Stage::SynthesizeCode => "synthesize_code",
            Stage::Score => "score",
            Stage::Canonicalize => "canonicalize",
        }
    }

    /// Code-like stages run cooler than the open-ended ones.
    pub fn default_temperature(self) -> f64 {
        match self {
            Stage::Sketch | Stage::Score => 0.5,
            Stage::Translate | Stage::SynthesizeCode | Stage::Canonicalize => 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmRequest {
    pub stage: Stage,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
    /// Which of several independent completions of the same prompt this
    /// is. Replay uses it to pick among stored alternatives; the live
    /// backend derives the sampling seed from it.
    pub draw: u64,
}

impl LmRequest {
    pub fn new(stage: Stage, prompt: impl Into<String>) -> Self {
        Self {
            stage,
            prompt: prompt.into(),
            temperature: stage.default_temperature(),
            max_tokens: 2048,
            stop_sequences: Vec::new(),
            draw: 0,
        }
    }

    pub fn with_draw(mut self, draw: u64) -> Self {
        self.draw = draw;
        self
    }

    pub fn with_stop(mut self, stop: impl Into<String>) -> Self {
        self.stop_sequences.push(stop.into());
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmResponse {
    pub text: String,
    pub backend_id: String,
    /// Seconds spent waiting on the backend.
    pub latency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LmError {
    #[error("language model backend unavailable: {message}")]
    BackendUnavailable { message: String },
    #[error("no fixture for {stage:?} prompt(s): {}", keys.join(", "))]
    FixtureMissing { stage: Stage, keys: Vec<String> },
    #[error("rate limited by the language model backend{}", retry_after.map(|s| format!(" (retry after {s} s)")).unwrap_or_default())]
    RateLimited { retry_after: Option<u64> },
    #[error("language model returned an empty completion")]
    EmptyCompletion,
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError>;

    /// Identifies the backend in responses and run records.
    fn id(&self) -> String;

    /// `n` independent completions, drawn as `request.draw + i`. Fails as a
    /// whole if any draw fails; missing fixtures are all reported together.
    fn complete_many(&self, request: &LmRequest, n: usize) -> Result<Vec<LmResponse>, LmError> {
        assert!(n >= 1, "complete_many needs n >= 1");
        let mut out = Vec::with_capacity(n);
        let mut missing: Vec<String> = Vec::new();
        for i in 0..n {
            let req = request.clone().with_draw(request.draw + i as u64);
            match self.complete(&req) {
                Ok(r) => out.push(r),
                Err(LmError::FixtureMissing { keys, .. }) => {
                    for k in keys {
                        if !missing.contains(&k) {
                            missing.push(k);
                        }
                    }
                }
                Err(e) => return Err(e),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(LmError::FixtureMissing {
                stage: request.stage,
                keys: missing,
            })
        }
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Arc<T> {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError> {
        (**self).complete(request)
    }

    fn id(&self) -> String {
        (**self).id()
    }

    fn complete_many(&self, request: &LmRequest, n: usize) -> Result<Vec<LmResponse>, LmError> {
        (**self).complete_many(request, n)
    }
}

/// A model backed by a function, for tests and fixture authoring.
pub struct ScriptedLm<F> {
    name: String,
    respond: F,
}

impl<F> ScriptedLm<F>
where
    F: Fn(&LmRequest) -> Result<String, LmError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, respond: F) -> Self {
        Self {
            name: name.into(),
            respond,
        }
    }
}

impl<F> LanguageModel for ScriptedLm<F>
where
    F: Fn(&LmRequest) -> Result<String, LmError> + Send + Sync,
{
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError> {
        let text = (self.respond)(request)?;
        if text.is_empty() {
            return Err(LmError::EmptyCompletion);
        }
        Ok(LmResponse {
            text,
            backend_id: self.id(),
            latency: 0.0,
            fixture_key: None,
        })
    }

    fn id(&self) -> String {
        format!("scripted:{}", self.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_temperatures() {
        assert_eq!(Stage::SynthesizeCode.default_temperature(), 0.2);
        assert_eq!(Stage::Sketch.default_temperature(), 0.5);
        assert_eq!(Stage::Score.default_temperature(), 0.5);
        assert_eq!(Stage::Translate.default_temperature(), 0.2);
        assert_eq!(Stage::Canonicalize.default_temperature(), 0.2);
        assert_eq!(LmRequest::new(Stage::Sketch, "x").temperature, 0.5);
    }

    #[test]
    fn complete_many_uses_consecutive_draws() {
        let lm = ScriptedLm::new("echo", |r: &LmRequest| Ok(format!("draw {}", r.draw)));
        let out = lm.complete_many(&LmRequest::new(Stage::Translate, "p").with_draw(8), 3).unwrap();
        let texts: Vec<_> = out.iter().map(|r| r.text.as_str()).collect();
        assert_eq!(texts, ["draw 8", "draw 9", "draw 10"]);
        let single = lm.complete_many(&LmRequest::new(Stage::Translate, "p"), 1).unwrap();
        assert_eq!(single, vec![lm.complete(&LmRequest::new(Stage::Translate, "p")).unwrap()]);
    }
}
