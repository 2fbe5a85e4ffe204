use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SynthesisError;

/// A patient case: observation sentences in order, then the questions to
/// answer. Stored as JSON `{id, sentences, queries}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVignette")]
pub struct Vignette {
    pub id: String,
    pub sentences: Vec<String>,
    pub queries: Vec<String>,
}

#[derive(Deserialize)]
struct RawVignette {
    id: String,
    sentences: Vec<String>,
    queries: Vec<String>,
}

impl TryFrom<RawVignette> for Vignette {
    type Error = SynthesisError;

    fn try_from(raw: RawVignette) -> Result<Self, Self::Error> {
        Vignette::new(raw.id, raw.sentences, raw.queries)
    }
}

impl Vignette {
    pub fn new<S, Q>(
        id: impl Into<String>,
        sentences: impl IntoIterator<Item = S>,
        queries: impl IntoIterator<Item = Q>,
    ) -> Result<Self, SynthesisError>
    where
        S: Into<String>,
        Q: Into<String>,
    {
        let v = Vignette {
            id: id.into(),
            sentences: sentences.into_iter().map(Into::into).collect(),
            queries: queries.into_iter().map(Into::into).collect(),
        };
        let blank = |xs: &[String]| xs.is_empty() || xs.iter().any(|x| x.trim().is_empty());
        if blank(&v.sentences) {
            return Err(SynthesisError::InvalidVignette("sentences must be non-empty".into()));
        }
        if blank(&v.queries) {
            return Err(SynthesisError::InvalidVignette("queries must be non-empty".into()));
        }
        Ok(v)
    }

    pub fn from_json(text: &str) -> Result<Self, SynthesisError> {
        serde_json::from_str(text).map_err(|e| SynthesisError::InvalidVignette(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SynthesisError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SynthesisError::InvalidVignette(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Record key the model must bind for question `i` (0-based).
    pub fn query_key(i: usize) -> String {
        format!("query{}", i + 1)
    }

    pub fn query_keys(&self) -> Vec<String> {
        (0..self.queries.len()).map(Self::query_key).collect()
    }
}
