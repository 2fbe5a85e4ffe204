//! Oracles and corpus loaders shared by test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use medmsa::ppl::{enumerate, parse, ExactDistribution, Program};
use statrs::distribution::{ContinuousCDF, Normal};

pub const MARIE: &str = include_str!("../../prompts/exemplar_model.medppl");

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Discrete calibration corpus, sorted by file name.
pub fn corpus() -> Vec<(String, Program)> {
    let dir = workspace_root().join("data/corpus");
    let mut entries: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "medppl"))
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|p| {
            let src = std::fs::read_to_string(&p).unwrap();
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let program = parse(&src).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, program)
        })
        .collect()
}

fn upper_tail(mean: f64, sd: f64, threshold: f64) -> f64 {
    1.0 - Normal::new(mean, sd).unwrap().cdf(threshold)
}

/// The exemplar model with its one continuous comparison, `gaussian(m, s) > 30`,
/// replaced by a flip with the analytic normal tail probability.
pub fn marie_hybrid_source() -> String {
    let cholera = upper_tail(30.0, 3.0, 30.0);
    let listed = upper_tail(25.0, 5.0, 30.0);
    let other = upper_tail(20.0, 5.0, 30.0);
    let swaps = [
        (
            "gaussian(baseline_fatigue_mean + 10, baseline_fatigue_std - 2)",
            format!("flip({cholera:?})"),
        ),
        (
            "gaussian(baseline_fatigue_mean + 5, baseline_fatigue_std)",
            format!("flip({listed:?})"),
        ),
        (
            "gaussian(baseline_fatigue_mean, baseline_fatigue_std)",
            format!("flip({other:?})"),
        ),
        ("fatigue_level(patient) > 30", "fatigue_level(patient)".to_string()),
    ];
    let mut src = MARIE.to_string();
    for (from, to) in swaps {
        assert_eq!(src.matches(from).count(), 1, "{from}");
        src = src.replace(from, &to);
    }
    src
}

pub fn marie_hybrid_oracle() -> ExactDistribution {
    enumerate(&parse(&marie_hybrid_source()).unwrap()).unwrap()
}

pub fn total_variation(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> f64 {
    let keys: std::collections::BTreeSet<&String> = p.keys().chain(q.keys()).collect();
    keys.into_iter()
        .map(|k| (p.get(k).unwrap_or(&0.0) - q.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
        / 2.0
}

pub fn data_dir() -> PathBuf {
    workspace_root().join("data")
}

/// Replay backend over the shipped fixtures.
pub fn fixtures() -> medmsa::lm::FixtureBackend {
    use medmsa::lm::{FixtureBackend, FixtureStore, ReplayPolicy};
    FixtureBackend::replay(FixtureStore::new(data_dir().join("fixtures")), ReplayPolicy::Cycle)
}

pub fn vignette(id: &str) -> medmsa::synthesis::Vignette {
    medmsa::synthesis::Vignette::load(&data_dir().join(format!("vignettes/{id}.json"))).unwrap()
}

pub fn overrides() -> BTreeMap<String, String> {
    serde_json::from_str(&std::fs::read_to_string(data_dir().join("overrides.json")).unwrap()).unwrap()
}

/// A run request over a shipped vignette with a reduced sample target.
pub fn request(id: &str, k: usize, target_samples: u64) -> medmsa::runner::RunRequest {
    medmsa::runner::RunRequest {
        vignette: vignette(id),
        k,
        seed: 7,
        config: medmsa::synthesis::SynthesisConfig {
            target_samples,
            ..Default::default()
        },
        overrides: overrides(),
    }
}

/// `(name, source)` pairs from a patch corpus directory, skipping the
/// expected outputs.
pub fn patch_corpus(kind: &str) -> Vec<(String, String)> {
    let dir = data_dir().join("patch-corpus").join(kind);
    let mut out: Vec<(String, String)> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".medppl") && !p.to_string_lossy().ends_with(".patched.medppl"))
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}
