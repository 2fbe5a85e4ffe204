//! What-if edits: change one model, rerun its inference, compare.
//!
//! The edited model becomes a new version under the run's
//! `interventions/` directory; the base model and run files are never
//! touched. Versions record their parent, so edits form a tree rooted at a
//! synthesized candidate.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonicalize::{apply_mapping, build_mapping, CanonicalizeError, CategoryMapping};
use crate::clock::Clock;
use crate::differential::{ensemble_distributions, DifferentialDistribution, DifferentialError, ModelDistribution};
use crate::lm::LanguageModel;
use crate::ppl::{apply_edit, parse, rejection_sample_with_id, Edit, EditError, Program, RuntimeError, SampleSet, Value};
use crate::rng::SeedStream;
use crate::store::{format_version, parse_version, write_json, RunRecord, RunStore, StoreError, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum InterventionError {
    #[error("model {0} not found")]
    ModelNotFound(String),
    #[error("model {0} did not compile; only compiled models can be edited")]
    ModelNotCompiled(String),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error("edited model failed at run time: {0}")]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Canonicalize(#[from] CanonicalizeError),
    #[error(transparent)]
    Differential(#[from] DifferentialError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// A synthesized candidate (by 1-based index) or an intervention version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelRef {
    Candidate(usize),
    Version(String),
}

impl FromStr for ModelRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if parse_version(s).is_some() {
            return Ok(ModelRef::Version(s.to_string()));
        }
        s.parse::<usize>()
            .ok()
            .filter(|&i| i >= 1)
            .map(ModelRef::Candidate)
            .ok_or_else(|| format!("`{s}` is neither a candidate index nor a version id"))
    }
}

impl fmt::Display for ModelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelRef::Candidate(i) => write!(f, "{i}"),
            ModelRef::Version(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionResult {
    pub schema_version: u32,
    pub run_id: String,
    /// The model that was edited: a candidate index or a version id.
    pub base_model_id: String,
    /// Candidate at the root of the lineage; its slot in the ensemble is
    /// the one replaced.
    pub root_candidate: usize,
    pub new_model_version_id: String,
    pub edit: Edit,
    pub seed: u64,
    pub accepted_count: u64,
    pub proposed_count: u64,
    /// No sample was accepted; `after` is empty.
    pub budget_exhausted: bool,
    /// The base model alone, per query.
    pub before: IndexMap<String, DifferentialDistribution>,
    /// The edited model alone, per query.
    pub after: IndexMap<String, DifferentialDistribution>,
    pub before_ensemble: IndexMap<String, DifferentialDistribution>,
    /// The ensemble with the edited model in place of the root candidate.
    pub after_ensemble: IndexMap<String, DifferentialDistribution>,
    /// Whether the run's category mapping had to be extended.
    pub mapping_extended: bool,
    pub created_ms: u64,
}

pub struct InterventionRequest<'a> {
    pub model: ModelRef,
    pub edit: Edit,
    /// Defaults to a stream derived from the run seed and the version.
    pub seed: Option<u64>,
    /// Used only if the edit introduces categories the run never saw.
    pub lm: Option<&'a dyn LanguageModel>,
}

struct Base {
    source: String,
    samples: Option<SampleSet>,
    mapping: CategoryMapping,
    root_candidate: usize,
}

fn resolve_base(store: &RunStore, record: &RunRecord, model: &ModelRef) -> Result<Base, InterventionError> {
    let run_mapping = record.mapping.clone().unwrap_or_default();
    match model {
        ModelRef::Candidate(i) => {
            let cand = record
                .run
                .candidate(*i)
                .ok_or_else(|| InterventionError::ModelNotFound(model.to_string()))?;
            if !cand.is_valid() {
                return Err(InterventionError::ModelNotCompiled(model.to_string()));
            }
            Ok(Base {
                source: cand.patched_source.clone().expect("compiled models have source"),
                samples: cand.sample_set.clone(),
                mapping: run_mapping,
                root_candidate: *i,
            })
        }
        ModelRef::Version(v) => {
            let stored = store.load_version(&record.run.run_id, v).map_err(|e| match e {
                StoreError::VersionNotFound(_) => InterventionError::ModelNotFound(v.clone()),
                other => other.into(),
            })?;
            Ok(Base {
                source: stored.source,
                samples: stored.samples,
                mapping: effective_mapping(store, record, v)?,
                root_candidate: stored.result.root_candidate,
            })
        }
    }
}

/// The mapping in force for a version: the nearest extended mapping along
/// its lineage, else the run's.
fn effective_mapping(store: &RunStore, record: &RunRecord, version: &str) -> Result<CategoryMapping, InterventionError> {
    let mut current = version.to_string();
    loop {
        let stored = store.load_version(&record.run.run_id, &current)?;
        if let Some(m) = stored.mapping {
            return Ok(m);
        }
        match parse_version(&stored.result.base_model_id) {
            Some(_) => current = stored.result.base_model_id,
            None => return Ok(record.mapping.clone().unwrap_or_default()),
        }
    }
}

fn strings(samples: &SampleSet) -> BTreeSet<String> {
    samples
        .samples
        .values()
        .flatten()
        .filter_map(|v| match v {
            Value::Str(s) => Some(s.clone()),
            _ => None,
        })
        .collect()
}

fn single(query: &str, model_id: &str, samples: Option<&SampleSet>, mapping: &CategoryMapping) -> Result<ModelDistribution, InterventionError> {
    match samples {
        Some(s) if s.accepted_count > 0 => {
            let mapped = apply_mapping(s, mapping, query)?;
            Ok(ModelDistribution::new(model_id, mapped.counts(query)))
        }
        _ => Ok(ModelDistribution::new(model_id, Default::default())),
    }
}

fn empty(query: &str) -> DifferentialDistribution {
    DifferentialDistribution {
        query: query.to_string(),
        n_models: 0,
        total_samples: 0,
        entries: Vec::new(),
        coverage: 0.0,
    }
}

fn distribution(query: &str, models: &[ModelDistribution]) -> Result<DifferentialDistribution, InterventionError> {
    match ensemble_distributions(query, models) {
        Ok(d) => Ok(d),
        Err(DifferentialError::NoValidModels) => Ok(empty(query)),
        Err(e) => Err(e.into()),
    }
}

/// Applies the edit to the referenced model, samples the result under the
/// run's budgets and persists a new version.
pub fn intervene(
    store: &RunStore,
    run_id: &str,
    request: &InterventionRequest<'_>,
    clock: &Clock,
) -> Result<InterventionResult, InterventionError> {
    let record = store.load(run_id)?;
    let base = resolve_base(store, &record, &request.model)?;
    let base_program = parse(&base.source).map_err(|e| EditError::EditProducesInvalidProgram {
        diagnostics: vec![(&e).into()],
    })?;
    let edited: Program = apply_edit(&base_program, &request.edit)?;

    let (number, version, dir) = store.allocate_version(run_id)?;
    let outcome = run_version(&record, &base, &edited, request, number, &version, clock);
    match outcome {
        Ok((result, samples, mapping)) => {
            write_json(&dir.join("edit.json"), &request.edit)?;
            crate::store::write_atomic(&dir.join("model.medppl"), edited.source().as_bytes()).map_err(|e| {
                StoreError::Io {
                    path: dir.join("model.medppl"),
                    source: e,
                }
            })?;
            write_json(&dir.join("samples.json"), &samples)?;
            if let Some(m) = &mapping {
                write_json(&dir.join("mapping.json"), m)?;
            }
            write_json(&dir.join("result.json"), &result)?;
            Ok(result)
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&dir);
            Err(e)
        }
    }
}

type VersionOutcome = (InterventionResult, SampleSet, Option<CategoryMapping>);

fn run_version(
    record: &RunRecord,
    base: &Base,
    edited: &Program,
    request: &InterventionRequest<'_>,
    number: u64,
    version: &str,
    clock: &Clock,
) -> Result<VersionOutcome, InterventionError> {
    let run = &record.run;
    let config = &run.config;
    let seed = request
        .seed
        .unwrap_or_else(|| SeedStream::new(run.seed).named("intervention").child(number).seed());
    let stream = SeedStream::new(seed);

    let init = rejection_sample_with_id(edited, version, 1, &config.init_budget, stream.named("init").seed())?;
    let mut samples = if init.accepted_count > 0 {
        rejection_sample_with_id(
            edited,
            version,
            config.target_samples,
            &config.sample_budget,
            stream.named("sample").seed(),
        )?
    } else {
        init
    };
    samples.wall_time = clock.elapsed_secs(samples.wall_time);

    let mut raws = edited.declared_categories();
    raws.extend(strings(&samples));
    let unseen = base.mapping.missing(raws.iter());
    let mut mapping = base.mapping.clone();
    let extended = !unseen.is_empty();
    if extended {
        let addition = match request.lm {
            Some(lm) => build_mapping(&unseen, lm, &record.overrides)?,
            None => {
                let mut m = CategoryMapping::identity(unseen.iter());
                m.warnings.push("no language model for new categories; mapped to themselves".into());
                m
            }
        };
        mapping.extend_with(&addition);
    }

    let mut before = IndexMap::new();
    let mut after = IndexMap::new();
    let mut before_ensemble = IndexMap::new();
    let mut after_ensemble = IndexMap::new();
    for query in run.vignette.query_keys() {
        let base_dist = single(&query, &request.model.to_string(), base.samples.as_ref(), &mapping)?;
        let new_dist = single(&query, version, Some(&samples), &mapping)?;
        before.insert(query.clone(), distribution(&query, std::slice::from_ref(&base_dist))?);
        after.insert(query.clone(), distribution(&query, std::slice::from_ref(&new_dist))?);

        let mut others = Vec::new();
        for cand in run.valid_models() {
            if cand.index != base.root_candidate {
                others.push(single(&query, &cand.index.to_string(), cand.sample_set.as_ref(), &mapping)?);
            }
        }
        let mut with_base = others.clone();
        with_base.push(base_dist);
        let mut with_new = others;
        with_new.push(new_dist);
        before_ensemble.insert(query.clone(), distribution(&query, &with_base)?);
        after_ensemble.insert(query.clone(), distribution(&query, &with_new)?);
    }

    let result = InterventionResult {
        schema_version: SCHEMA_VERSION,
        run_id: run.run_id.clone(),
        base_model_id: request.model.to_string(),
        root_candidate: base.root_candidate,
        new_model_version_id: format_version(number),
        edit: request.edit.clone(),
        seed,
        accepted_count: samples.accepted_count,
        proposed_count: samples.proposed_count,
        budget_exhausted: samples.accepted_count == 0,
        before,
        after,
        before_ensemble,
        after_ensemble,
        mapping_extended: extended,
        created_ms: clock.now_ms(),
    };
    Ok((result, samples, extended.then_some(mapping)))
}

/// Source of a model version obtained by replaying its edit chain from the
/// root candidate.
pub fn replay_lineage(store: &RunStore, run_id: &str, version: &str) -> Result<String, InterventionError> {
    let record = store.load(run_id)?;
    let mut chain = Vec::new();
    let mut current = version.to_string();
    let root = loop {
        let stored = store.load_version(run_id, &current).map_err(|e| match e {
            StoreError::VersionNotFound(v) => InterventionError::ModelNotFound(v),
            other => other.into(),
        })?;
        chain.push(stored.edit);
        match stored.result.base_model_id.parse::<ModelRef>() {
            Ok(ModelRef::Version(v)) => current = v,
            _ => break stored.result.root_candidate,
        }
    };
    let cand = record
        .run
        .candidate(root)
        .ok_or_else(|| InterventionError::ModelNotFound(root.to_string()))?;
    let mut program = parse(cand.patched_source.as_deref().unwrap_or_default()).map_err(|e| {
        EditError::EditProducesInvalidProgram {
            diagnostics: vec![(&e).into()],
        }
    })?;
    for edit in chain.iter().rev() {
        program = apply_edit(&program, edit)?;
    }
    Ok(program.source().to_string())
}
