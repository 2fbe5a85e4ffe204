//! JSON shapes and lookups shared by the CLI and the service.

use medmsa::differential::{top_n, DifferentialDistribution};
use medmsa::intervene::{InterventionResult, ModelRef};
use medmsa::ppl::Diagnostic;
use medmsa::store::{RunRecord, RunStore};
use medmsa::synthesis::{CandidateStatus, ModelCandidate, Vignette};
use serde::Serialize;

use crate::error::{ApiError, ErrorCode};

/// Accepts a 1-based question number (`2`) or a query key (`query2`).
pub fn resolve_query(vignette: &Vignette, query: &str) -> Result<String, ApiError> {
    let keys = vignette.query_keys();
    let key = match query.trim().parse::<usize>() {
        Ok(i) if i >= 1 => Vignette::query_key(i - 1),
        Ok(_) => return Err(ApiError::new(ErrorCode::QueryNotFound, "query numbers start at 1")),
        Err(_) => query.trim().to_string(),
    };
    if keys.contains(&key) {
        Ok(key)
    } else {
        Err(ApiError::new(ErrorCode::QueryNotFound, format!("query `{query}` not found"))
            .with_details(serde_json::json!({ "queries": keys })))
    }
}

pub fn parse_model_ref(model: &str) -> Result<ModelRef, ApiError> {
    model.parse().map_err(|e: String| ApiError::new(ErrorCode::ModelNotFound, e))
}

/// Differentials for one query (or all), truncated to `top` entries.
pub fn differentials(record: &RunRecord, query: Option<&str>, top: usize) -> Result<Vec<DifferentialDistribution>, ApiError> {
    if top == 0 {
        return Err(ApiError::bad_request("top must be at least 1"));
    }
    let keys = match query {
        Some(q) => vec![resolve_query(&record.run.vignette, q)?],
        None => record.run.vignette.query_keys(),
    };
    if record.run.no_valid_models() {
        return Err(ApiError::new(ErrorCode::NoValidModels, "the run has no valid models"));
    }
    keys.iter()
        .map(|k| {
            record
                .differential(k)
                .map(|d| top_n(d, top))
                .ok_or_else(|| ApiError::new(ErrorCode::QueryNotFound, format!("no differential stored for `{k}`")))
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct ModelView {
    pub model_id: String,
    pub index: usize,
    pub status: CandidateStatus,
    pub valid: bool,
    pub semantic_score: Option<f64>,
    pub accepted_count: Option<u64>,
    pub proposed_count: Option<u64>,
    pub failure: Option<String>,
    pub diagnostics: Vec<Diagnostic>,
    pub has_source: bool,
    /// Condition expressions in order; the targets of index edits.
    pub conditions: Vec<String>,
}

impl ModelView {
    pub fn of(c: &ModelCandidate) -> Self {
        let conditions = c
            .program()
            .map(|p| (0..p.conditions().len()).filter_map(|i| p.condition_text(i).map(str::to_string)).collect())
            .unwrap_or_default();
        Self {
            model_id: c.index.to_string(),
            index: c.index,
            status: c.status,
            valid: c.is_valid(),
            semantic_score: c.semantic_score,
            accepted_count: c.sample_set.as_ref().map(|s| s.accepted_count),
            proposed_count: c.sample_set.as_ref().map(|s| s.proposed_count),
            failure: c.failure.clone(),
            diagnostics: c.diagnostics.clone(),
            has_source: c.source.is_some(),
            conditions,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct VersionView {
    pub model_id: String,
    pub base_model_id: String,
    pub root_candidate: usize,
    pub budget_exhausted: bool,
    pub accepted_count: u64,
    pub conditions: Vec<String>,
}

impl VersionView {
    fn of(store: &RunStore, r: &InterventionResult) -> Self {
        let conditions = store
            .load_version(&r.run_id, &r.new_model_version_id)
            .ok()
            .and_then(|v| medmsa::ppl::parse(&v.source).ok())
            .map(|p| (0..p.conditions().len()).filter_map(|i| p.condition_text(i).map(str::to_string)).collect())
            .unwrap_or_default();
        Self {
            model_id: r.new_model_version_id.clone(),
            base_model_id: r.base_model_id.clone(),
            root_candidate: r.root_candidate,
            budget_exhausted: r.budget_exhausted,
            accepted_count: r.accepted_count,
            conditions,
        }
    }
}

pub fn versions(store: &RunStore, run_id: &str) -> Result<Vec<VersionView>, ApiError> {
    Ok(store.list_interventions(run_id)?.iter().map(|r| VersionView::of(store, r)).collect())
}

/// MedPPL text of a candidate (as patched) or of an edited version.
pub fn model_source(store: &RunStore, record: &RunRecord, model: &ModelRef) -> Result<String, ApiError> {
    match model {
        ModelRef::Candidate(i) => {
            let c = record
                .run
                .candidate(*i)
                .ok_or_else(|| ApiError::new(ErrorCode::ModelNotFound, format!("model {i} not found")))?;
            c.patched_source
                .clone()
                .or_else(|| c.source.clone())
                .ok_or_else(|| ApiError::new(ErrorCode::ModelNotFound, format!("model {i} produced no source")))
        }
        ModelRef::Version(v) => Ok(store.load_version(&record.run.run_id, v)?.source),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queries_by_number_or_key() {
        let v = Vignette::new("v", ["a"], ["q1?", "q2?"]).unwrap();
        assert_eq!(resolve_query(&v, "2").unwrap(), "query2");
        assert_eq!(resolve_query(&v, "query1").unwrap(), "query1");
        assert_eq!(resolve_query(&v, "3").unwrap_err().code, ErrorCode::QueryNotFound);
        assert_eq!(resolve_query(&v, "0").unwrap_err().code, ErrorCode::QueryNotFound);
        assert_eq!(resolve_query(&v, "query9").unwrap_err().code, ErrorCode::QueryNotFound);
    }

    #[test]
    fn model_refs() {
        assert_eq!(parse_model_ref("3").unwrap(), ModelRef::Candidate(3));
        assert_eq!(parse_model_ref("v0002").unwrap(), ModelRef::Version("v0002".into()));
        assert_eq!(parse_model_ref("x").unwrap_err().code, ErrorCode::ModelNotFound);
    }
}
