use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::parse::*;
use super::prompts::{self, render, scenario};
use super::{SynthesisError, Vignette};
use crate::clock::Clock;
use crate::differential::Weighting;
use crate::lm::{LanguageModel, LmError, LmRequest, Stage};
use crate::ppl::{parse, rejection_sample_with_id, validate, Budget, Diagnostic, DiagnosticKind, Program, SampleSet};
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub n_translations: usize,
    pub n_sketches: usize,
    /// Candidates whose model scores below this are rejected.
    pub semantic_threshold: f64,
    /// Accepted samples drawn from each compiled model.
    pub target_samples: u64,
    /// Limit for the initialization check, which needs one accepted sample.
    pub init_budget: Budget,
    pub sample_budget: Budget,
    /// Translate once per run instead of once per candidate.
    pub share_translation: bool,
    pub weighting: Weighting,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            n_translations: 4,
            n_sketches: 3,
            semantic_threshold: 0.3,
            target_samples: 5000,
            init_budget: Budget::new(Duration::from_secs(90), Some(1_000_000)),
            sample_budget: Budget::new(Duration::from_secs(600), Some(50_000_000)),
            share_translation: false,
            weighting: Weighting::Equal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Compiled,
    /// No usable translation or sketch, or the code completion had no
    /// closing model delimiter.
    SynthesisFailed,
    SemanticRejected,
    ParseFailed,
    ValidateFailed,
    /// No sample accepted within the initialization budget.
    BudgetFailed,
    /// The model raised a runtime error while being sampled.
    RuntimeFailed,
}

/// Where a candidate is in the pipeline; reported to a [`ProgressSink`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum CandidateStage {
    Pending,
    Translating,
    Sketching,
    Synthesizing,
    Checking,
    Sampling,
    Done { status: CandidateStatus },
}

impl CandidateStage {
    /// Position in the pipeline; stages reported for one candidate never
    /// decrease.
    pub fn ordinal(self) -> u8 {
        match self {
            CandidateStage::Pending => 0,
            CandidateStage::Translating => 1,
            CandidateStage::Sketching => 2,
            CandidateStage::Synthesizing => 3,
            CandidateStage::Checking => 4,
            CandidateStage::Sampling => 5,
            CandidateStage::Done { .. } => 6,
        }
    }
}

pub trait ProgressSink: Send + Sync {
    /// `index` is the 1-based candidate index.
    fn candidate(&self, index: usize, stage: CandidateStage);
}

pub struct NoProgress;

impl ProgressSink for NoProgress {
    fn candidate(&self, _: usize, _: CandidateStage) {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitCheck {
    pub accepted: u64,
    pub proposed: u64,
    pub wall_time: f64,
    pub budget_exhausted: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCandidate {
    /// 1-based.
    pub index: usize,
    pub status: CandidateStatus,
    pub translation: Option<Translation>,
    pub sketch: Option<Sketch>,
    /// Model text between the delimiters, as completed.
    pub source: Option<String>,
    /// `source` after commented-out conditions are restored.
    pub patched_source: Option<String>,
    pub semantic_score: Option<f64>,
    pub diagnostics: Vec<Diagnostic>,
    /// Why the candidate stopped, when it did not compile.
    pub failure: Option<String>,
    pub init: Option<InitCheck>,
    pub sample_set: Option<SampleSet>,
    pub started_ms: u64,
    pub finished_ms: u64,
}

impl ModelCandidate {
    /// Compiled and at least one sample accepted in the main sampling run.
    pub fn is_valid(&self) -> bool {
        self.status == CandidateStatus::Compiled && self.sample_set.as_ref().is_some_and(|s| s.accepted_count > 0)
    }

    pub fn program(&self) -> Option<Program> {
        parse(self.patched_source.as_deref()?).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRun {
    pub run_id: String,
    pub vignette: Vignette,
    pub k: usize,
    pub seed: u64,
    pub config: SynthesisConfig,
    pub lm_backend: String,
    pub candidates: Vec<ModelCandidate>,
    pub started_ms: u64,
    pub finished_ms: u64,
}

impl SynthesisRun {
    pub fn valid_models(&self) -> Vec<&ModelCandidate> {
        self.candidates.iter().filter(|c| c.is_valid()).collect()
    }

    pub fn no_valid_models(&self) -> bool {
        !self.candidates.iter().any(ModelCandidate::is_valid)
    }

    pub fn candidate(&self, index: usize) -> Option<&ModelCandidate> {
        self.candidates.iter().find(|c| c.index == index)
    }

    pub fn count(&self, status: CandidateStatus) -> usize {
        self.candidates.iter().filter(|c| c.status == status).count()
    }
}

/// Result of the three automated checks on one model.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub status: CandidateStatus,
    pub semantic_score: f64,
    pub diagnostics: Vec<Diagnostic>,
    pub failure: Option<String>,
    pub init: Option<InitCheck>,
    /// The parsed program when it parsed and validated.
    pub program: Option<Program>,
}

/// Semantic score, then parse and validate, then the initialization check.
/// The first failing check decides the status.
#[allow(clippy::too_many_arguments)]
pub fn check_candidate(
    source: &str,
    vignette: &Vignette,
    lm: &dyn LanguageModel,
    draw: u64,
    threshold: f64,
    init_budget: &Budget,
    init_seed: SeedStream,
    clock: &Clock,
) -> Result<CheckOutcome, LmError> {
    let prompt = render(prompts::SCORE_MODEL, &[("scenario", &scenario(vignette)), ("model", source)]);
    let score = parse_score(&lm.complete(&LmRequest::new(Stage::Score, prompt).with_draw(draw))?.text);
    let mut out = CheckOutcome {
        status: CandidateStatus::SemanticRejected,
        semantic_score: score,
        diagnostics: Vec::new(),
        failure: None,
        init: None,
        program: None,
    };
    if score < threshold {
        out.failure = Some(format!("semantic score {score} below threshold {threshold}"));
        return Ok(out);
    }
    let program = match parse(source) {
        Ok(p) => p,
        Err(e) => {
            out.status = CandidateStatus::ParseFailed;
            out.failure = Some(e.to_string());
            out.diagnostics.push(Diagnostic::from(&e));
            return Ok(out);
        }
    };
    let mut diagnostics = validate(&program);
    let names: Vec<&str> = program.query_names().collect();
    for key in vignette.query_keys() {
        if !names.contains(&key.as_str()) {
            diagnostics.push(Diagnostic::new(
                DiagnosticKind::MissingQuery,
                format!("return record has no `{key}`"),
                None,
            ));
        }
    }
    if !diagnostics.is_empty() {
        out.status = CandidateStatus::ValidateFailed;
        out.failure = Some(format!("{} diagnostic(s)", diagnostics.len()));
        out.diagnostics = diagnostics;
        return Ok(out);
    }
    match rejection_sample_with_id(&program, "init", 1, init_budget, init_seed.seed()) {
        Err(e) => {
            out.status = CandidateStatus::RuntimeFailed;
            out.failure = Some(e.to_string());
        }
        Ok(s) => {
            out.status = if s.accepted_count > 0 {
                CandidateStatus::Compiled
            } else {
                out.failure = Some(format!("no sample accepted in {} proposals", s.proposed_count));
                CandidateStatus::BudgetFailed
            };
            out.init = Some(InitCheck {
                accepted: s.accepted_count,
                proposed: s.proposed_count,
                wall_time: clock.elapsed_secs(s.wall_time),
                budget_exhausted: s.budget_exhausted,
                seed: s.seed,
            });
        }
    }
    if out.status == CandidateStatus::Compiled {
        out.program = Some(program);
    }
    Ok(out)
}

/// The first maximal item; ties go to the lowest index.
fn best<T>(items: Vec<(T, f64)>) -> Option<T> {
    let mut best: Option<(T, f64)> = None;
    for (item, score) in items {
        if best.as_ref().is_none_or(|(_, s)| score > *s) {
            best = Some((item, score));
        }
    }
    best.map(|(item, _)| item)
}

fn score_draw(lm: &dyn LanguageModel, prompt: String, draw: u64) -> Result<f64, LmError> {
    Ok(parse_score(&lm.complete(&LmRequest::new(Stage::Score, prompt).with_draw(draw))?.text))
}

/// Generates `n` translations from `draw` upward, scores the parsable ones
/// and returns the best.
fn translate(vignette: &Vignette, lm: &dyn LanguageModel, n: usize, draw: u64) -> Result<Result<Translation, String>, LmError> {
    let scen = scenario(vignette);
    let prompt = render(prompts::TRANSLATE, &[("scenario", &scen)]);
    let request = LmRequest::new(Stage::Translate, prompt).with_draw(draw);
    let mut scored = Vec::new();
    let mut errors = Vec::new();
    for (j, response) in lm.complete_many(&request, n)?.into_iter().enumerate() {
        match parse_translation(&response.text, vignette.queries.len()) {
            Ok(mut t) => {
                let prompt = render(prompts::SCORE_TRANSLATION, &[("scenario", &scen), ("translation", &t.render())]);
                t.lm_score = score_draw(lm, prompt, draw + j as u64)?;
                let s = t.lm_score;
                scored.push((t, s));
            }
            Err(e) => errors.push(format!("translation {}: {e}", j + 1)),
        }
    }
    Ok(best(scored).ok_or_else(|| format!("no parsable translation ({})", errors.join("; "))))
}

fn sketch(
    vignette: &Vignette,
    translation: &Translation,
    lm: &dyn LanguageModel,
    n: usize,
    draw: u64,
) -> Result<Result<Sketch, String>, LmError> {
    let scen = scenario(vignette);
    let rendered = translation.render();
    let prompt = render(prompts::SKETCH, &[("scenario", &scen), ("translation", &rendered)]);
    let request = LmRequest::new(Stage::Sketch, prompt).with_draw(draw);
    let mut scored = Vec::new();
    let mut errors = Vec::new();
    for (j, response) in lm.complete_many(&request, n)?.into_iter().enumerate() {
        match parse_sketch(&response.text, translation) {
            Ok(mut s) => {
                let prompt = render(
                    prompts::SCORE_SKETCH,
                    &[("scenario", &scen), ("translation", &rendered), ("scratchpad", &s.render())],
                );
                s.lm_score = score_draw(lm, prompt, draw + j as u64)?;
                let score = s.lm_score;
                scored.push((s, score));
            }
            Err(e) => errors.push(format!("sketch {}: {e}", j + 1)),
        }
    }
    Ok(best(scored).ok_or_else(|| format!("no usable sketch ({})", errors.join("; "))))
}

struct CandidateContext<'a> {
    vignette: &'a Vignette,
    config: &'a SynthesisConfig,
    lm: &'a dyn LanguageModel,
    clock: &'a Clock,
    progress: &'a dyn ProgressSink,
    seed: SeedStream,
    shared_translation: Option<&'a Result<Translation, String>>,
}

fn run_candidate(ctx: &CandidateContext<'_>, index: usize) -> Result<ModelCandidate, LmError> {
    let c = (index - 1) as u64;
    let stream = ctx.seed.child(index as u64);
    let mut cand = ModelCandidate {
        index,
        status: CandidateStatus::SynthesisFailed,
        translation: None,
        sketch: None,
        source: None,
        patched_source: None,
        semantic_score: None,
        diagnostics: Vec::new(),
        failure: None,
        init: None,
        sample_set: None,
        started_ms: ctx.clock.now_ms(),
        finished_ms: 0,
    };
    let finish = |mut cand: ModelCandidate| {
        cand.finished_ms = ctx.clock.now_ms();
        ctx.progress.candidate(index, CandidateStage::Done { status: cand.status });
        Ok(cand)
    };

    ctx.progress.candidate(index, CandidateStage::Translating);
    let translation = match ctx.shared_translation {
        Some(shared) => shared.clone(),
        None => {
            let n = ctx.config.n_translations;
            translate(ctx.vignette, ctx.lm, n, c * n as u64)?
        }
    };
    let translation = match translation {
        Ok(t) => t,
        Err(e) => {
            cand.failure = Some(e);
            return finish(cand);
        }
    };

    ctx.progress.candidate(index, CandidateStage::Sketching);
    let n = ctx.config.n_sketches;
    let sk = sketch(ctx.vignette, &translation, ctx.lm, n, c * n as u64)?;
    cand.translation = Some(translation);
    let sk = match sk {
        Ok(s) => s,
        Err(e) => {
            cand.failure = Some(e);
            return finish(cand);
        }
    };

    ctx.progress.candidate(index, CandidateStage::Synthesizing);
    let prompt = render(
        prompts::SYNTHESIZE_CODE,
        &[
            ("scenario", &scenario(ctx.vignette)),
            ("translation", &cand.translation.as_ref().expect("set above").render()),
            ("scratchpad", &sk.render()),
        ],
    );
    cand.sketch = Some(sk);
    let completion = ctx.lm.complete(&LmRequest::new(Stage::SynthesizeCode, prompt).with_draw(c))?;
    let Some(source) = extract_model(&completion.text) else {
        cand.failure = Some(format!("completion has no {} delimiter", prompts::END_MODEL));
        return finish(cand);
    };
    let patched = patch_conditions(&source);
    cand.source = Some(source);
    cand.patched_source = Some(patched.clone());

    ctx.progress.candidate(index, CandidateStage::Checking);
    let check = check_candidate(
        &patched,
        ctx.vignette,
        ctx.lm,
        c,
        ctx.config.semantic_threshold,
        &ctx.config.init_budget,
        stream.named("init"),
        ctx.clock,
    )?;
    cand.status = check.status;
    cand.semantic_score = Some(check.semantic_score);
    cand.diagnostics = check.diagnostics;
    cand.failure = check.failure;
    cand.init = check.init;
    let Some(program) = check.program else {
        return finish(cand);
    };

    ctx.progress.candidate(index, CandidateStage::Sampling);
    let seed = stream.named("sample").seed();
    match rejection_sample_with_id(
        &program,
        &index.to_string(),
        ctx.config.target_samples,
        &ctx.config.sample_budget,
        seed,
    ) {
        Ok(mut samples) => {
            samples.wall_time = ctx.clock.elapsed_secs(samples.wall_time);
            cand.sample_set = Some(samples);
        }
        Err(e) => {
            cand.status = CandidateStatus::RuntimeFailed;
            cand.failure = Some(e.to_string());
        }
    }
    finish(cand)
}

/// Sortable run id: the clock's timestamp plus randomness that, under the
/// logical clock, is derived from the inputs so replays agree.
pub fn new_run_id(clock: &Clock, vignette: &Vignette, k: usize, seed: u64, config: &SynthesisConfig) -> String {
    let ms = clock.now_ms();
    let random = if clock.is_logical() {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(vignette).expect("vignette serializes"));
        h.update(k.to_le_bytes());
        h.update(seed.to_le_bytes());
        h.update(serde_json::to_vec(config).expect("config serializes"));
        let digest = h.finalize();
        let mut bytes = [0u8; 16];
        bytes.copy_from_slice(&digest[..16]);
        u128::from_be_bytes(bytes)
    } else {
        rand::random::<u128>()
    };
    ulid::Ulid::from_parts(ms, random).to_string()
}

/// Runs all k candidates. Individual candidate failures become statuses;
/// a language-model infrastructure error (missing fixture, unreachable
/// backend) aborts the run.
pub fn run_pipeline(
    vignette: &Vignette,
    k: usize,
    seed: u64,
    config: &SynthesisConfig,
    lm: &dyn LanguageModel,
    clock: &Clock,
    progress: &dyn ProgressSink,
) -> Result<SynthesisRun, SynthesisError> {
    let run_id = new_run_id(clock, vignette, k, seed, config);
    run_pipeline_as(run_id, vignette, k, seed, config, lm, clock, progress)
}

/// [`run_pipeline`] under an id chosen by the caller, for callers that
/// must hand the id out before the run finishes.
#[allow(clippy::too_many_arguments)]
pub fn run_pipeline_as(
    run_id: String,
    vignette: &Vignette,
    k: usize,
    seed: u64,
    config: &SynthesisConfig,
    lm: &dyn LanguageModel,
    clock: &Clock,
    progress: &dyn ProgressSink,
) -> Result<SynthesisRun, SynthesisError> {
    if k == 0 {
        return Err(SynthesisError::ZeroCandidates);
    }
    let started_ms = clock.now_ms();
    for index in 1..=k {
        progress.candidate(index, CandidateStage::Pending);
    }
    let shared = if config.share_translation {
        Some(translate(vignette, lm, config.n_translations, 0)?)
    } else {
        None
    };
    let ctx = CandidateContext {
        vignette,
        config,
        lm,
        clock,
        progress,
        seed: SeedStream::new(seed),
        shared_translation: shared.as_ref(),
    };
    let mut candidates = Vec::with_capacity(k);
    for index in 1..=k {
        let cand = run_candidate(&ctx, index)?;
        tracing::debug!(index, status = ?cand.status, "candidate finished");
        candidates.push(cand);
    }
    Ok(SynthesisRun {
        run_id,
        vignette: vignette.clone(),
        k,
        seed,
        config: config.clone(),
        lm_backend: lm.id(),
        candidates,
        started_ms,
        finished_ms: clock.now_ms(),
    })
}
