mod common;

use medmsa::clock::Clock;
use medmsa::lm::{FixtureBackend, FixtureStore, LanguageModel, LmError, ReplayPolicy, Stage};
use medmsa::ppl::{parse, validate, DiagnosticKind};
use medmsa::synthesis::{patch_conditions, run_pipeline, CandidateStatus, NoProgress, SynthesisConfig, SynthesisError};

use CandidateStatus::*;

fn config(target_samples: u64) -> SynthesisConfig {
    SynthesisConfig {
        target_samples,
        ..Default::default()
    }
}

fn statuses(id: &str, k: usize) -> Vec<CandidateStatus> {
    let run = run_pipeline(&common::vignette(id), k, 7, &config(200), &common::fixtures(), &Clock::logical(), &NoProgress)
        .unwrap();
    run.candidates.iter().map(|c| c.status).collect()
}

#[test]
fn first_vignette_covers_front_end_failures() {
    let run = run_pipeline(
        &common::vignette("sean-1"),
        7,
        7,
        &config(300),
        &common::fixtures(),
        &Clock::logical(),
        &NoProgress,
    )
    .unwrap();
    let got: Vec<_> = run.candidates.iter().map(|c| c.status).collect();
    assert_eq!(
        got,
        [Compiled, Compiled, Compiled, SemanticRejected, ParseFailed, SynthesisFailed, ValidateFailed]
    );

    let c = &run.candidates;
    // the best-scoring translation and sketch win every time
    for cand in c {
        let t = cand.translation.as_ref().unwrap();
        assert_eq!(t.lm_score, 0.9);
        assert_eq!(t.condition_statements.len(), 2);
        assert_eq!(cand.sketch.as_ref().unwrap().lm_score, 0.8);
    }
    // candidate 3 had its conditions commented out
    assert_ne!(c[2].source, c[2].patched_source);
    assert_eq!(c[2].program().unwrap().conditions().len(), 2);
    assert_eq!(c[3].semantic_score, Some(0.1));
    assert_eq!(c[4].diagnostics.len(), 1, "{:?}", c[4].diagnostics);
    assert_eq!(c[4].diagnostics[0].kind, DiagnosticKind::UnsupportedConstruct);
    assert!(c[5].source.is_none());
    assert!(c[5].failure.as_deref().unwrap().contains("<END_WEBPPL_MODEL>"));
    assert!(c[6].diagnostics.iter().any(|d| d.kind == DiagnosticKind::ArityMismatch));

    for cand in run.valid_models() {
        let s = cand.sample_set.as_ref().unwrap();
        assert_eq!(s.accepted_count, 300);
        assert_eq!(s.model_id, cand.index.to_string());
        assert_eq!(s.wall_time, 0.0);
        assert!(cand.init.as_ref().unwrap().accepted == 1);
    }
    assert_eq!(run.count(Compiled), 3);
}

#[test]
fn budget_and_coverage_failures() {
    let run = run_pipeline(
        &common::vignette("sean-3"),
        5,
        7,
        &config(200),
        &common::fixtures(),
        &Clock::logical(),
        &NoProgress,
    )
    .unwrap();
    let got: Vec<_> = run.candidates.iter().map(|c| c.status).collect();
    assert_eq!(got, [Compiled, Compiled, BudgetFailed, SemanticRejected, ValidateFailed]);
    let init = run.candidates[2].init.as_ref().unwrap();
    assert_eq!((init.accepted, init.proposed), (0, 1_000_000));
    assert!(init.budget_exhausted);
    assert!(run.candidates[2].sample_set.is_none());
    assert!(run.candidates[4].diagnostics.iter().any(|d| d.kind == DiagnosticKind::MissingQuery));
}

#[test]
fn runtime_errors_and_bad_probabilities() {
    let got = statuses("sean-4", 10);
    assert_eq!(
        got,
        [
            Compiled,
            Compiled,
            Compiled,
            Compiled,
            Compiled,
            ParseFailed,
            SemanticRejected,
            ValidateFailed,
            SynthesisFailed,
            RuntimeFailed
        ]
    );
}

#[test]
fn second_vignette_pool() {
    assert_eq!(statuses("sean-2", 4), [Compiled, Compiled, Compiled, ValidateFailed]);
}

#[test]
fn runs_are_deterministic() {
    let a = run_pipeline(&common::vignette("sean-2"), 4, 11, &config(400), &common::fixtures(), &Clock::logical(), &NoProgress)
        .unwrap();
    let b = run_pipeline(&common::vignette("sean-2"), 4, 11, &config(400), &common::fixtures(), &Clock::logical(), &NoProgress)
        .unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = run_pipeline(&common::vignette("sean-2"), 4, 12, &config(400), &common::fixtures(), &Clock::logical(), &NoProgress)
        .unwrap();
    assert_ne!(a.run_id, c.run_id);
    assert_ne!(a.candidates[0].sample_set, c.candidates[0].sample_set);
}

#[test]
fn strict_replay_aborts_on_missing_draws() {
    let strict = FixtureBackend::replay(FixtureStore::new(common::data_dir().join("fixtures")), ReplayPolicy::Strict);
    let err = run_pipeline(&common::vignette("sean-1"), 3, 7, &config(10), &strict, &Clock::logical(), &NoProgress)
        .unwrap_err();
    match err {
        SynthesisError::Lm(LmError::FixtureMissing { stage, keys }) => {
            // only draw 0 of each score prompt was recorded
            assert!(matches!(stage, Stage::Translate | Stage::Score), "{stage:?}");
            assert!(!keys.is_empty());
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unknown_vignette_has_no_fixtures() {
    let v = medmsa::synthesis::Vignette::new("x", ["Ana has a cough."], ["Does Ana have the flu?"]).unwrap();
    let lm = common::fixtures();
    let err = run_pipeline(&v, 1, 7, &config(10), &lm, &Clock::logical(), &NoProgress).unwrap_err();
    assert!(matches!(err, SynthesisError::Lm(LmError::FixtureMissing { stage: Stage::Translate, .. })));
    assert!(lm.id().starts_with("replay"), "{}", lm.id());
}

#[test]
fn patch_fixes_commented_sources() {
    let sources = common::patch_corpus("commented");
    assert_eq!(sources.len(), 5);
    for (name, src) in sources {
        let expected = std::fs::read_to_string(common::data_dir().join(format!("patch-corpus/commented/{name}.patched.medppl")))
            .unwrap();
        let before = parse(&src).map(|p| p.conditions().len()).unwrap_or(0);
        let patched = patch_conditions(&src);
        assert_eq!(patched, expected, "{name}");
        assert_eq!(patch_conditions(&patched), patched, "{name} is not idempotent");
        let program = parse(&patched).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(validate(&program).is_empty(), "{name}: {:?}", validate(&program));
        assert!(program.conditions().len() > before, "{name}");
    }
}

#[test]
fn patch_leaves_clean_sources_alone() {
    let sources = common::patch_corpus("clean");
    assert_eq!(sources.len(), 20);
    for (name, src) in sources {
        assert_eq!(patch_conditions(&src), src, "{name}");
        assert!(validate(&parse(&src).unwrap()).is_empty(), "{name}");
    }
}
