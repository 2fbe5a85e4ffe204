//! The staged generate/score/filter pipeline that turns a vignette into k
//! candidate MedPPL models.
//!
//! Each candidate runs translate → sketch → code → patch → check on its own
//! draws and seed stream. Candidate failures are recorded as statuses; only
//! language-model infrastructure errors abort a run.

mod parse;
mod pipeline;
pub mod prompts;
mod vignette;

use thiserror::Error;

use crate::lm::LmError;

pub use parse::{
    extract_model, parse_score, parse_sketch, parse_translation, patch_conditions, Sketch, TraceEntry, Translation,
};
pub use pipeline::{
    check_candidate, new_run_id, run_pipeline, run_pipeline_as, CandidateStage, CandidateStatus, CheckOutcome, InitCheck, ModelCandidate,
    NoProgress, ProgressSink, SynthesisConfig, SynthesisRun,
};
pub use vignette::Vignette;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error("invalid vignette: {0}")]
    InvalidVignette(String),
    #[error("k must be at least 1")]
    ZeroCandidates,
    #[error(transparent)]
    Lm(#[from] LmError),
}
