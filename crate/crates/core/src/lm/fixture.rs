//! Stored completions.
//!
//! Layout: `<dir>/<stage>/<key>.txt` holds draw 0 of a prompt and
//! `<key>.<i>.txt` holds draw `i`. The key is the SHA-256 of the stage tag
//! and the whitespace-normalized prompt, so fixtures survive reflowing a
//! template but not changing its words.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use sha2::{Digest, Sha256};

use super::{LanguageModel, LmError, LmRequest, LmResponse, Stage};

pub fn fixture_key(stage: Stage, prompt: &str) -> String {
    let normalized = prompt.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut hasher = Sha256::new();
    hasher.update(stage.tag().as_bytes());
    hasher.update(b"\n");
    hasher.update(normalized.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
    write_lock: Arc<Mutex<()>>,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            write_lock: Arc::new(Mutex::new(())),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, stage: Stage, key: &str, draw: u64) -> PathBuf {
        let name = if draw == 0 {
            format!("{key}.txt")
        } else {
            format!("{key}.{draw}.txt")
        };
        self.dir.join(stage.tag()).join(name)
    }

    pub fn read(&self, stage: Stage, key: &str, draw: u64) -> Option<String> {
        std::fs::read_to_string(self.path(stage, key, draw)).ok()
    }

    /// Number of consecutive draws stored from 0 upward.
    pub fn pool_size(&self, stage: Stage, key: &str) -> u64 {
        let mut n = 0;
        while self.path(stage, key, n).is_file() {
            n += 1;
        }
        n
    }

    pub fn write(&self, stage: Stage, key: &str, draw: u64, text: &str) -> std::io::Result<()> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.path(stage, key, draw);
        crate::store::write_atomic(&path, text.as_bytes())
    }
}

/// How replay maps a requested draw onto the stored alternatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayPolicy {
    /// Draw `d` reads its own file when present and otherwise stored
    /// alternative `d mod m`, so a handful of authored alternatives serves
    /// any number of candidates.
    Cycle,
    /// Draw `d` must exist exactly.
    Strict,
}

pub enum FixtureMode {
    Replay(ReplayPolicy),
    /// Calls `upstream` for draws not yet stored and writes them.
    Record(Arc<dyn LanguageModel>),
}

pub struct FixtureBackend {
    store: FixtureStore,
    mode: FixtureMode,
}

impl FixtureBackend {
    pub fn replay(store: FixtureStore, policy: ReplayPolicy) -> Self {
        Self {
            store,
            mode: FixtureMode::Replay(policy),
        }
    }

    pub fn record(store: FixtureStore, upstream: Arc<dyn LanguageModel>) -> Self {
        Self {
            store,
            mode: FixtureMode::Record(upstream),
        }
    }

    pub fn store(&self) -> &FixtureStore {
        &self.store
    }

    fn respond(&self, text: String, key: String, started: Instant) -> Result<LmResponse, LmError> {
        if text.is_empty() {
            return Err(LmError::EmptyCompletion);
        }
        Ok(LmResponse {
            text,
            backend_id: self.id(),
            latency: started.elapsed().as_secs_f64(),
            fixture_key: Some(key),
        })
    }

    fn missing(request: &LmRequest, key: String) -> LmError {
        LmError::FixtureMissing {
            stage: request.stage,
            keys: vec![key],
        }
    }
}

impl LanguageModel for FixtureBackend {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError> {
        let started = Instant::now();
        let key = fixture_key(request.stage, &request.prompt);
        let text = match &self.mode {
            FixtureMode::Replay(ReplayPolicy::Strict) => self
                .store
                .read(request.stage, &key, request.draw)
                .ok_or_else(|| Self::missing(request, format!("{key}#{}", request.draw)))?,
            FixtureMode::Replay(ReplayPolicy::Cycle) => {
                if let Some(text) = self.store.read(request.stage, &key, request.draw) {
                    return self.respond(text, key, started);
                }
                let pool = self.store.pool_size(request.stage, &key);
                if pool == 0 {
                    return Err(Self::missing(request, key));
                }
                self.store
                    .read(request.stage, &key, request.draw % pool)
                    .ok_or_else(|| Self::missing(request, key.clone()))?
            }
            FixtureMode::Record(upstream) => match self.store.read(request.stage, &key, request.draw) {
                Some(text) => text,
                None => {
                    let response = upstream.complete(request)?;
                    self.store
                        .write(request.stage, &key, request.draw, &response.text)
                        .map_err(|e| LmError::BackendUnavailable {
                            message: format!("writing fixture: {e}"),
                        })?;
                    response.text
                }
            },
        };
        self.respond(text, key, started)
    }

    fn id(&self) -> String {
        match self.mode {
            FixtureMode::Replay(_) => "replay".into(),
            FixtureMode::Record(_) => "record".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU64, Ordering};

    use super::*;
    use crate::lm::ScriptedLm;

    #[test]
    fn key_ignores_whitespace_layout_but_not_stage() {
        assert_eq!(
            fixture_key(Stage::Translate, "Sean has\n  chest pain."),
            fixture_key(Stage::Translate, " Sean has chest pain.\n")
        );
        assert_ne!(
            fixture_key(Stage::Translate, "Sean has chest pain."),
            fixture_key(Stage::Sketch, "Sean has chest pain.")
        );
        assert_eq!(fixture_key(Stage::Score, "x").len(), 64);
    }

    #[test]
    fn missing_fixture_reports_key() {
        let dir = tempfile::tempdir().unwrap();
        let lm = FixtureBackend::replay(FixtureStore::new(dir.path()), ReplayPolicy::Cycle);
        let err = lm.complete(&LmRequest::new(Stage::Translate, "novel")).unwrap_err();
        assert_eq!(
            err,
            LmError::FixtureMissing {
                stage: Stage::Translate,
                keys: vec![fixture_key(Stage::Translate, "novel")]
            }
        );
    }

    #[test]
    fn record_then_replay_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::new(dir.path());
        let calls = Arc::new(AtomicU64::new(0));
        let counter = calls.clone();
        let upstream = Arc::new(ScriptedLm::new("up", move |r: &LmRequest| {
            counter.fetch_add(1, Ordering::SeqCst);
            Ok(format!("answer {} to {}", r.draw, r.prompt))
        }));
        let recorder = FixtureBackend::record(store.clone(), upstream);
        let req = LmRequest::new(Stage::Translate, "Sean has chest pain.");
        let recorded = recorder.complete_many(&req, 3).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        // already stored draws are not requested again
        recorder.complete(&req).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 3);

        let replay = FixtureBackend::replay(store, ReplayPolicy::Strict);
        let replayed = replay.complete_many(&req, 3).unwrap();
        for (a, b) in recorded.iter().zip(&replayed) {
            assert_eq!(a.text, b.text);
            assert_eq!(a.fixture_key, b.fixture_key);
        }
    }

    #[test]
    fn cycle_and_strict_policies() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::new(dir.path());
        let key = fixture_key(Stage::Sketch, "p");
        store.write(Stage::Sketch, &key, 0, "zero").unwrap();
        store.write(Stage::Sketch, &key, 1, "one").unwrap();
        let cycle = FixtureBackend::replay(store.clone(), ReplayPolicy::Cycle);
        let texts: Vec<_> = cycle
            .complete_many(&LmRequest::new(Stage::Sketch, "p"), 5)
            .unwrap()
            .into_iter()
            .map(|r| r.text)
            .collect();
        assert_eq!(texts, ["zero", "one", "zero", "one", "zero"]);
        store.write(Stage::Sketch, &key, 3, "three").unwrap();
        let own = cycle.complete(&LmRequest::new(Stage::Sketch, "p").with_draw(3)).unwrap();
        assert_eq!(own.text, "three");

        let strict = FixtureBackend::replay(store, ReplayPolicy::Strict);
        let err = strict.complete_many(&LmRequest::new(Stage::Sketch, "p"), 5).unwrap_err();
        assert_eq!(
            err,
            LmError::FixtureMissing {
                stage: Stage::Sketch,
                keys: vec![format!("{key}#2"), format!("{key}#4")]
            }
        );
    }
}
