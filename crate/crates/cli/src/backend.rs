//! Choosing a language-model backend and a clock for a run.

use std::path::PathBuf;
use std::sync::Arc;

use clap::ValueEnum;
use medmsa::clock::Clock;
use medmsa::lm::{FixtureBackend, FixtureStore, HttpBackend, HttpConfig, LanguageModel, ReplayPolicy};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Stored fixtures only; no network.
    #[default]
    Replay,
    /// A live chat-completions endpoint.
    Http,
    /// Live calls, each written to the fixture directory.
    Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Logical for replay, system otherwise.
    #[default]
    Auto,
    Logical,
    System,
}

impl ClockMode {
    pub fn clock(self, backend: BackendKind) -> Clock {
        match (self, backend) {
            (ClockMode::Logical, _) | (ClockMode::Auto, BackendKind::Replay) => Clock::logical(),
            _ => Clock::System,
        }
    }
}

/// Everything needed to build any of the backends.
#[derive(Debug, Clone)]
pub struct LmOptions {
    pub fixtures: PathBuf,
    /// Replay requires the exact draw instead of cycling through the pool.
    pub strict: bool,
    pub http: HttpConfig,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            fixtures: PathBuf::from("data/fixtures"),
            strict: false,
            http: HttpConfig::default(),
        }
    }
}

impl LmOptions {
    pub fn build(&self, kind: BackendKind) -> Result<Arc<dyn LanguageModel>, ApiError> {
        let store = FixtureStore::new(&self.fixtures);
        Ok(match kind {
            BackendKind::Replay => {
                if !self.fixtures.is_dir() {
                    return Err(ApiError::bad_request(format!(
                        "fixture directory {} does not exist",
                        self.fixtures.display()
                    )));
                }
                let policy = if self.strict { ReplayPolicy::Strict } else { ReplayPolicy::Cycle };
                Arc::new(FixtureBackend::replay(store, policy))
            }
            BackendKind::Http => Arc::new(HttpBackend::new(self.http.clone())?),
            BackendKind::Record => {
                let upstream: Arc<dyn LanguageModel> = Arc::new(HttpBackend::new(self.http.clone())?);
                Arc::new(FixtureBackend::record(store, upstream))
            }
        })
    }
}
