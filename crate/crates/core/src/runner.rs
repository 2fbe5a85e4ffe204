//! One complete run: synthesize, canonicalize, ensemble, persist.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonicalize::{build_mapping, CanonicalizeError, CategoryMapping};
use crate::clock::Clock;
use crate::differential::{ensemble, DifferentialDistribution, DifferentialError};
use crate::lm::{LanguageModel, LmError};
use crate::ppl::Value;
use crate::store::{RunRecord, RunStore, StoreError};
use crate::synthesis::{new_run_id, run_pipeline_as, ProgressSink, SynthesisConfig, SynthesisError, SynthesisRun, Vignette};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub vignette: Vignette,
    pub k: usize,
    pub seed: u64,
    #[serde(default)]
    pub config: SynthesisConfig,
    #[serde(default)]
    pub overrides: BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Canonicalize(#[from] CanonicalizeError),
    #[error(transparent)]
    Differential(#[from] DifferentialError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl RunError {
    /// The language-model error behind this failure, if any.
    pub fn lm_error(&self) -> Option<&LmError> {
        match self {
            RunError::Synthesis(SynthesisError::Lm(e)) | RunError::Canonicalize(CanonicalizeError::Lm(e)) => Some(e),
            _ => None,
        }
    }
}

/// String answers the run's valid models can produce: the categories
/// their programs declare plus every string actually sampled.
pub fn raw_categories(run: &SynthesisRun) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for cand in run.valid_models() {
        if let Some(program) = cand.program() {
            out.extend(program.declared_categories());
        }
        if let Some(samples) = &cand.sample_set {
            for values in samples.samples.values() {
                out.extend(values.iter().filter_map(|v| match v {
                    Value::Str(s) => Some(s.clone()),
                    _ => None,
                }));
            }
        }
    }
    out
}

/// Mapping and per-query differentials for a synthesized run; empty when
/// no model is valid.
pub fn summarize(
    run: &SynthesisRun,
    lm: &dyn LanguageModel,
    overrides: &BTreeMap<String, String>,
) -> Result<(Option<CategoryMapping>, Vec<DifferentialDistribution>), RunError> {
    if run.no_valid_models() {
        return Ok((None, Vec::new()));
    }
    let raws = raw_categories(run);
    let mapping = if raws.is_empty() {
        CategoryMapping::default()
    } else {
        build_mapping(&raws, lm, overrides)?
    };
    let mut differentials = Vec::new();
    for key in run.vignette.query_keys() {
        differentials.push(ensemble(run, &key, &mapping)?);
    }
    Ok((Some(mapping), differentials))
}

impl RunRequest {
    /// The id a run of this request gets under `clock`.
    pub fn run_id(&self, clock: &Clock) -> String {
        new_run_id(clock, &self.vignette, self.k, self.seed, &self.config)
    }
}

pub fn execute_run(
    request: &RunRequest,
    lm: &dyn LanguageModel,
    clock: &Clock,
    store: &RunStore,
    progress: &dyn ProgressSink,
) -> Result<(RunRecord, PathBuf), RunError> {
    execute_run_as(request.run_id(clock), request, lm, clock, store, progress)
}

/// [`execute_run`] under a precomputed id.
pub fn execute_run_as(
    run_id: String,
    request: &RunRequest,
    lm: &dyn LanguageModel,
    clock: &Clock,
    store: &RunStore,
    progress: &dyn ProgressSink,
) -> Result<(RunRecord, PathBuf), RunError> {
    let run = run_pipeline_as(
        run_id,
        &request.vignette,
        request.k,
        request.seed,
        &request.config,
        lm,
        clock,
        progress,
    )?;
    let (mapping, differentials) = summarize(&run, lm, &request.overrides)?;
    let record = RunRecord {
        run,
        overrides: request.overrides.clone(),
        mapping,
        differentials,
    };
    let dir = store.persist(&record)?;
    Ok((record, dir))
}
