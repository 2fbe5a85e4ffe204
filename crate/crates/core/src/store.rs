//! On-disk run store.
//!
//! ```text
//! <root>/<run_id>/manifest.json            written last; marks a complete run
//!                 candidates/<i>/translation.json
//!                                sketch.json
//!                                model.medppl
//!                                model.patched.medppl
//!                                checks.json
//!                                samples.json
//!                 mapping.json
//!                 differential/<query>.json
//!                 interventions/<vNNNN>/edit.json
//!                                       model.medppl
//!                                       samples.json
//!                                       mapping.json   only when extended
//!                                       result.json    written last
//! ```
//!
//! Every file is written to a temporary name and renamed into place.
//! Apart from new intervention directories, a completed run directory is
//! never modified.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonicalize::CategoryMapping;
use crate::differential::DifferentialDistribution;
use crate::intervene::InterventionResult;
use crate::ppl::{Diagnostic, Edit, SampleSet};
use crate::synthesis::{
    CandidateStatus, InitCheck, ModelCandidate, Sketch, SynthesisConfig, SynthesisRun, Translation, Vignette,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("run {0} already exists")]
    DuplicateRunId(String),
    #[error("run at {0} is incomplete (no manifest)")]
    IncompleteRun(PathBuf),
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("run {0} not found")]
    RunNotFound(String),
    #[error("model version {0} not found")]
    VersionNotFound(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`, so
/// readers see either the old file or the complete new one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| StoreError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), StoreError> {
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

fn read_optional_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, StoreError> {
    if path.is_file() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

fn read_optional_text(path: &Path) -> Result<Option<String>, StoreError> {
    if path.is_file() {
        std::fs::read_to_string(path).map(Some).map_err(io_err(path))
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub index: usize,
    pub status: CandidateStatus,
    pub valid: bool,
    pub semantic_score: Option<f64>,
    pub accepted_count: Option<u64>,
    pub failure: Option<String>,
}

impl CandidateSummary {
    pub fn of(c: &ModelCandidate) -> Self {
        Self {
            index: c.index,
            status: c.status,
            valid: c.is_valid(),
            semantic_score: c.semantic_score,
            accepted_count: c.sample_set.as_ref().map(|s| s.accepted_count),
            failure: c.failure.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub vignette: Vignette,
    pub k: usize,
    pub seed: u64,
    pub config: SynthesisConfig,
    /// Manual canonicalization overrides in force for the run.
    pub overrides: BTreeMap<String, String>,
    pub lm_backend: String,
    pub started_ms: u64,
    pub finished_ms: u64,
    pub candidates: Vec<CandidateSummary>,
    pub n_valid: usize,
    pub no_valid_models: bool,
    /// Query keys with a stored differential.
    pub queries: Vec<String>,
}

/// Everything persisted for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: SynthesisRun,
    pub overrides: BTreeMap<String, String>,
    /// Absent when no model was valid.
    pub mapping: Option<CategoryMapping>,
    pub differentials: Vec<DifferentialDistribution>,
}

impl RunRecord {
    pub fn manifest(&self) -> RunManifest {
        let run = &self.run;
        RunManifest {
            schema_version: SCHEMA_VERSION,
            run_id: run.run_id.clone(),
            vignette: run.vignette.clone(),
            k: run.k,
            seed: run.seed,
            config: run.config.clone(),
            overrides: self.overrides.clone(),
            lm_backend: run.lm_backend.clone(),
            started_ms: run.started_ms,
            finished_ms: run.finished_ms,
            candidates: run.candidates.iter().map(CandidateSummary::of).collect(),
            n_valid: run.valid_models().len(),
            no_valid_models: run.no_valid_models(),
            queries: self.differentials.iter().map(|d| d.query.clone()).collect(),
        }
    }

    pub fn differential(&self, query: &str) -> Option<&DifferentialDistribution> {
        self.differentials.iter().find(|d| d.query == query)
    }
}

/// Per-candidate check results, `checks.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CandidateChecks {
    index: usize,
    status: CandidateStatus,
    semantic_score: Option<f64>,
    diagnostics: Vec<Diagnostic>,
    failure: Option<String>,
    init: Option<InitCheck>,
    started_ms: u64,
    finished_ms: u64,
}

/// Runs that could be listed plus what was skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunListing {
    pub runs: Vec<RunManifest>,
    pub incomplete: usize,
    pub warnings: Vec<String>,
}

/// A stored intervention: the edited model and what came of it.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredVersion {
    pub result: InterventionResult,
    pub edit: Edit,
    pub source: String,
    pub samples: Option<SampleSet>,
    pub mapping: Option<CategoryMapping>,
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    fn check_id(&self, run_id: &str) -> Result<(), StoreError> {
        let ok = !run_id.is_empty() && run_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if ok {
            Ok(())
        } else {
            Err(StoreError::RunNotFound(run_id.to_string()))
        }
    }

    /// Writes the run; the manifest goes last.
    pub fn persist(&self, record: &RunRecord) -> Result<PathBuf, StoreError> {
        let run = &record.run;
        self.check_id(&run.run_id)?;
        let dir = self.run_dir(&run.run_id);
        if dir.join("manifest.json").exists() {
            return Err(StoreError::DuplicateRunId(run.run_id.clone()));
        }
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        for c in &run.candidates {
            let cdir = dir.join("candidates").join(c.index.to_string());
            std::fs::create_dir_all(&cdir).map_err(io_err(&cdir))?;
            if let Some(t) = &c.translation {
                write_json(&cdir.join("translation.json"), t)?;
            }
            if let Some(s) = &c.sketch {
                write_json(&cdir.join("sketch.json"), s)?;
            }
            if let Some(s) = &c.source {
                write_text(&cdir.join("model.medppl"), s)?;
            }
            if let Some(s) = &c.patched_source {
                write_text(&cdir.join("model.patched.medppl"), s)?;
            }
            write_json(
                &cdir.join("checks.json"),
                &CandidateChecks {
                    index: c.index,
                    status: c.status,
                    semantic_score: c.semantic_score,
                    diagnostics: c.diagnostics.clone(),
                    failure: c.failure.clone(),
                    init: c.init.clone(),
                    started_ms: c.started_ms,
                    finished_ms: c.finished_ms,
                },
            )?;
            if let Some(s) = &c.sample_set {
                write_json(&cdir.join("samples.json"), s)?;
            }
        }
        if let Some(m) = &record.mapping {
            write_json(&dir.join("mapping.json"), m)?;
        }
        for d in &record.differentials {
            write_json(&dir.join("differential").join(format!("{}.json", d.query)), d)?;
        }
        write_json(&dir.join("manifest.json"), &record.manifest())?;
        Ok(dir)
    }

    fn read_manifest(dir: &Path) -> Result<RunManifest, StoreError> {
        let path = dir.join("manifest.json");
        if !path.is_file() {
            return Err(StoreError::IncompleteRun(dir.to_path_buf()));
        }
        let value: serde_json::Value = read_json(&path)?;
        let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != SCHEMA_VERSION {
            return Err(StoreError::SchemaVersionMismatch {
                found,
                expected: SCHEMA_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| StoreError::Json {
            path,
            message: e.to_string(),
        })
    }

    pub fn manifest(&self, run_id: &str) -> Result<RunManifest, StoreError> {
        self.check_id(run_id)?;
        let dir = self.run_dir(run_id);
        if !dir.is_dir() {
            return Err(StoreError::RunNotFound(run_id.to_string()));
        }
        Self::read_manifest(&dir)
    }

    pub fn load(&self, run_id: &str) -> Result<RunRecord, StoreError> {
        self.check_id(run_id)?;
        let dir = self.run_dir(run_id);
        if !dir.is_dir() {
            return Err(StoreError::RunNotFound(run_id.to_string()));
        }
        load_dir(&dir)
    }

    /// Complete runs in id order; incomplete run directories are counted and
    /// unrelated files ignored.
    pub fn list(&self) -> Result<RunListing, StoreError> {
        let mut listing = RunListing::default();
        let entries = match std::fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(listing),
            Err(e) => return Err(io_err(&self.root)(e)),
        };
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            match Self::read_manifest(&dir) {
                Ok(m) => listing.runs.push(m),
                Err(StoreError::IncompleteRun(p)) => {
                    listing.incomplete += 1;
                    listing.warnings.push(format!("incomplete run at {}", p.display()));
                }
                Err(e) => listing.warnings.push(format!("{}: {e}", dir.display())),
            }
        }
        Ok(listing)
    }

    fn interventions_dir(&self, run_id: &str) -> PathBuf {
        self.run_dir(run_id).join("interventions")
    }

    /// Claims the next free version id (`v0001`, ...) by creating its
    /// directory; safe against concurrent claims.
    pub fn allocate_version(&self, run_id: &str) -> Result<(u64, String, PathBuf), StoreError> {
        let base = self.interventions_dir(run_id);
        std::fs::create_dir_all(&base).map_err(io_err(&base))?;
        let mut n = std::fs::read_dir(&base)
            .map_err(io_err(&base))?
            .filter_map(Result::ok)
            .filter_map(|e| parse_version(e.file_name().to_str()?))
            .max()
            .unwrap_or(0)
            + 1;
        loop {
            let id = format_version(n);
            let dir = base.join(&id);
            match std::fs::create_dir(&dir) {
                Ok(()) => return Ok((n, id, dir)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(io_err(&dir)(e)),
            }
        }
    }

    pub fn version_dir(&self, run_id: &str, version: &str) -> PathBuf {
        self.interventions_dir(run_id).join(version)
    }

    pub fn load_version(&self, run_id: &str, version: &str) -> Result<StoredVersion, StoreError> {
        if parse_version(version).is_none() {
            return Err(StoreError::VersionNotFound(version.to_string()));
        }
        let dir = self.version_dir(run_id, version);
        let result_path = dir.join("result.json");
        if !result_path.is_file() {
            return Err(StoreError::VersionNotFound(version.to_string()));
        }
        let model = dir.join("model.medppl");
        Ok(StoredVersion {
            result: read_json(&result_path)?,
            edit: read_json(&dir.join("edit.json"))?,
            source: std::fs::read_to_string(&model).map_err(io_err(&model))?,
            samples: read_optional_json(&dir.join("samples.json"))?,
            mapping: read_optional_json(&dir.join("mapping.json"))?,
        })
    }

    /// Completed interventions in version order.
    pub fn list_interventions(&self, run_id: &str) -> Result<Vec<InterventionResult>, StoreError> {
        let base = self.interventions_dir(run_id);
        if !base.is_dir() {
            return Ok(Vec::new());
        }
        let mut versions: Vec<(u64, PathBuf)> = std::fs::read_dir(&base)
            .map_err(io_err(&base))?
            .filter_map(Result::ok)
            .filter_map(|e| Some((parse_version(e.file_name().to_str()?)?, e.path())))
            .collect();
        versions.sort();
        let mut out = Vec::new();
        for (_, dir) in versions {
            if let Some(r) = read_optional_json(&dir.join("result.json"))? {
                out.push(r);
            }
        }
        Ok(out)
    }
}

pub fn format_version(n: u64) -> String {
    format!("v{n:04}")
}

pub fn parse_version(id: &str) -> Option<u64> {
    let digits = id.strip_prefix('v')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Loads the run stored in `dir`.
pub fn load_dir(dir: &Path) -> Result<RunRecord, StoreError> {
    let manifest = RunStore::read_manifest(dir)?;
    let mut candidates = Vec::with_capacity(manifest.candidates.len());
    for summary in &manifest.candidates {
        let cdir = dir.join("candidates").join(summary.index.to_string());
        let checks: CandidateChecks = read_json(&cdir.join("checks.json"))?;
        candidates.push(ModelCandidate {
            index: checks.index,
            status: checks.status,
            translation: read_optional_json::<Translation>(&cdir.join("translation.json"))?,
            sketch: read_optional_json::<Sketch>(&cdir.join("sketch.json"))?,
            source: read_optional_text(&cdir.join("model.medppl"))?,
            patched_source: read_optional_text(&cdir.join("model.patched.medppl"))?,
            semantic_score: checks.semantic_score,
            diagnostics: checks.diagnostics,
            failure: checks.failure,
            init: checks.init,
            sample_set: read_optional_json(&cdir.join("samples.json"))?,
            started_ms: checks.started_ms,
            finished_ms: checks.finished_ms,
        });
    }
    let mut differentials = Vec::new();
    for q in &manifest.queries {
        differentials.push(read_json(&dir.join("differential").join(format!("{q}.json")))?);
    }
    Ok(RunRecord {
        run: SynthesisRun {
            run_id: manifest.run_id,
            vignette: manifest.vignette,
            k: manifest.k,
            seed: manifest.seed,
            config: manifest.config,
            lm_backend: manifest.lm_backend,
            candidates,
            started_ms: manifest.started_ms,
            finished_ms: manifest.finished_ms,
        },
        overrides: manifest.overrides,
        mapping: read_optional_json(&dir.join("mapping.json"))?,
        differentials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn versions() {
        assert_eq!(format_version(3), "v0003");
        assert_eq!(parse_version("v0003"), Some(3));
        assert_eq!(parse_version("v"), None);
        assert_eq!(parse_version("3"), None);
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let (n1, id1, _) = store.allocate_version("r").unwrap();
        let (n2, id2, _) = store.allocate_version("r").unwrap();
        assert_eq!((n1, id1.as_str(), n2, id2.as_str()), (1, "v0001", 2, "v0002"));
    }

    #[test]
    fn empty_and_foreign_roots() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path().join("missing"));
        assert_eq!(store.list().unwrap(), RunListing::default());
        std::fs::write(dir.path().join("notes.txt"), "hi").unwrap();
        std::fs::create_dir(dir.path().join("half")).unwrap();
        let listing = RunStore::new(dir.path()).list().unwrap();
        assert!(listing.runs.is_empty());
        assert_eq!(listing.incomplete, 1);
        assert!(matches!(
            RunStore::new(dir.path()).load("../etc"),
            Err(StoreError::RunNotFound(_))
        ));
    }
}
