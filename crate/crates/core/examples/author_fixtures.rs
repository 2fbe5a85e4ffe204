//! Builds the replay fixtures under `data/fixtures` from the hand-written
//! completion pools in `data/fixture-sources`.
//!
//! A scripted model answers every prompt the pipeline sends by looking up
//! the vignette and stage, serving pool item `draw mod pool size`, and each
//! answer is written where a cycling replay backend will find it. The runs
//! are then replayed from the written fixtures to check they reproduce.
//!
//! ```text
//! cargo run -p medmsa --example author_fixtures
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use medmsa::clock::Clock;
use medmsa::lm::{fixture_key, FixtureBackend, FixtureStore, LanguageModel, LmError, LmRequest, ReplayPolicy, ScriptedLm, Stage};
use medmsa::runner::{execute_run, RunRequest};
use medmsa::store::RunStore;
use medmsa::synthesis::prompts::{scenario, START_MODEL, START_SCRATCHPAD};
use medmsa::synthesis::{
    extract_model, parse_sketch, parse_translation, patch_conditions, CandidateStage, ProgressSink, SynthesisConfig,
    Vignette,
};

const VIGNETTES: [&str; 4] = ["sean-1", "sean-2", "sean-3", "sean-4"];
const K: usize = 20;
const SEED: u64 = 7;

/// One pool item and the score a reviewer gives it.
struct Item {
    text: String,
    score: Option<f64>,
}

struct Pools {
    vignette: Vignette,
    scenario: String,
    translate: Vec<Item>,
    sketch: Vec<Item>,
    code: Vec<Item>,
}

fn load_pool(dir: &Path) -> Vec<Item> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| Item {
            text: fs::read_to_string(&p).unwrap(),
            score: fs::read_to_string(p.with_extension("score"))
                .ok()
                .map(|s| s.trim().parse().expect("score file holds a number")),
        })
        .collect()
}

fn score_reply(score: Option<f64>) -> String {
    let s = score.unwrap_or(0.5);
    format!("The model is reviewed against the case above.\nSCORE: {s}")
}

impl Pools {
    fn score(&self, prompt: &str) -> String {
        let n = self.vignette.queries.len();
        if prompt.contains(&format!("{START_MODEL}\n")) {
            let hit = self.code.iter().find(|item| {
                extract_model(&item.text).is_some_and(|m| prompt.contains(patch_conditions(&m).trim_end()))
            });
            return score_reply(hit.expect("scored model comes from the pool").score);
        }
        let translations: Vec<_> = self.translate.iter().filter_map(|t| parse_translation(&t.text, n).ok()).collect();
        if prompt.contains(&format!("{START_SCRATCHPAD}\n")) {
            let hit = self.sketch.iter().find(|item| {
                translations
                    .iter()
                    .filter_map(|t| parse_sketch(&item.text, t).ok())
                    .any(|s| prompt.contains(s.render().trim_end()))
            });
            return score_reply(hit.expect("scored sketch comes from the pool").score);
        }
        let hit = self
            .translate
            .iter()
            .find(|item| parse_translation(&item.text, n).is_ok_and(|t| prompt.contains(t.render().trim_end())));
        score_reply(hit.expect("scored translation comes from the pool").score)
    }
}

/// Groups names with the synonym table, keeping only targets that are
/// themselves in the list.
fn canonicalize_reply(prompt: &str, table: &BTreeMap<String, Vec<String>>) -> String {
    let start = prompt.find("raw categories: ").expect("category list") + "raw categories: ".len();
    let end = start + prompt[start..].find('\n').unwrap();
    let names: Vec<String> = serde_json::from_str(&prompt[start..end]).expect("categories are a JSON array");
    let mut out = serde_json::Map::new();
    for name in &names {
        let target = table
            .get(name)
            .and_then(|ts| ts.iter().find(|t| names.contains(t)))
            .unwrap_or(name);
        out.insert(name.clone(), target.clone().into());
    }
    serde_json::to_string_pretty(&out).unwrap()
}

struct Timing(Mutex<BTreeMap<usize, Instant>>);

impl ProgressSink for Timing {
    fn candidate(&self, index: usize, stage: CandidateStage) {
        let mut started = self.0.lock().unwrap();
        match stage {
            CandidateStage::Translating => {
                started.insert(index, Instant::now());
            }
            CandidateStage::Done { status } => {
                let secs = started[&index].elapsed().as_secs_f64();
                eprintln!("  candidate {index:>2}: {status:?} in {secs:.2}s");
            }
            _ => {}
        }
    }
}

fn main() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let sources = data.join("fixture-sources");
    let out = FixtureStore::new(data.join("fixtures"));
    let overrides: BTreeMap<String, String> =
        serde_json::from_str(&fs::read_to_string(data.join("overrides.json")).unwrap()).unwrap();
    let table: BTreeMap<String, Vec<String>> =
        serde_json::from_str(&fs::read_to_string(sources.join("canonicalize.json")).unwrap()).unwrap();

    let pools: Vec<Pools> = VIGNETTES
        .iter()
        .map(|id| {
            let vignette = Vignette::load(&data.join(format!("vignettes/{id}.json"))).unwrap();
            Pools {
                scenario: scenario(&vignette),
                vignette,
                translate: load_pool(&sources.join(id).join("translate")),
                sketch: load_pool(&sources.join(id).join("sketch")),
                code: load_pool(&sources.join(id).join("code")),
            }
        })
        .collect();

    let author = ScriptedLm::new("fixture-author", |req: &LmRequest| -> Result<String, LmError> {
        let (text, draw) = match req.stage {
            Stage::Canonicalize => (canonicalize_reply(&req.prompt, &table), 0),
            stage => {
                let p = pools
                    .iter()
                    .find(|p| req.prompt.contains(&p.scenario))
                    .expect("prompt names a known vignette");
                let pool = match stage {
                    Stage::Translate => &p.translate,
                    Stage::Sketch => &p.sketch,
                    Stage::SynthesizeCode => &p.code,
                    _ => &Vec::new(),
                };
                if pool.is_empty() {
                    (p.score(&req.prompt), 0)
                } else {
                    let d = req.draw % pool.len() as u64;
                    (pool[d as usize].text.clone(), d)
                }
            }
        };
        write(&out, req, draw, &text);
        Ok(text)
    });

    // the canonicalization test set with its synonyms and near-synonyms
    let set = ["anxiety attack", "anxiety disorder", "collapsed lung", "heart attack", "pneumothorax"];
    let prompt = medmsa::synthesis::prompts::render(
        medmsa::synthesis::prompts::CANONICALIZE,
        &[("categories", &serde_json::to_string(&set).unwrap())],
    );
    author.complete(&LmRequest::new(Stage::Canonicalize, prompt)).unwrap();

    let scratch = tempfile::tempdir().unwrap();
    let config = SynthesisConfig::default();
    let mut authored = Vec::new();
    for p in &pools {
        eprintln!("{}", p.vignette.id);
        let request = RunRequest {
            vignette: p.vignette.clone(),
            k: K,
            seed: SEED,
            config: config.clone(),
            overrides: overrides.clone(),
        };
        let timing = Timing(Mutex::new(BTreeMap::new()));
        let store = RunStore::new(scratch.path().join("author"));
        let (record, _) = execute_run(&request, &author, &Clock::logical(), &store, &timing).unwrap();
        let m = record.manifest();
        println!("{}: {} of {} compiled", p.vignette.id, m.n_valid, K);
        for d in &record.differentials {
            print!("{}", d.render_bars(30));
        }
        authored.push((request, record));
    }

    // smaller runs see fewer distinct models, so their category lists (and
    // canonicalization prompts) differ; record those too
    for p in &pools {
        for k in 1..p.code.len() {
            let request = RunRequest {
                vignette: p.vignette.clone(),
                k,
                seed: SEED,
                config: SynthesisConfig {
                    target_samples: 20,
                    ..config.clone()
                },
                overrides: overrides.clone(),
            };
            let store = RunStore::new(scratch.path().join("small"));
            execute_run(&request, &author, &Clock::logical(), &store, &medmsa::synthesis::NoProgress).unwrap();
        }
    }

    // replaying from the written files must give the same runs
    let replay = FixtureBackend::replay(out.clone(), ReplayPolicy::Cycle);
    for (request, record) in &authored {
        let store = RunStore::new(scratch.path().join("replay"));
        let (again, _) = execute_run(request, &replay, &Clock::logical(), &store, &medmsa::synthesis::NoProgress).unwrap();
        assert_eq!(again.differentials, record.differentials, "{} replays differently", request.vignette.id);
        assert_eq!(again.run.run_id, record.run.run_id);
    }
    println!("replay check passed; fixtures in {}", out.dir().display());
}

fn write(store: &FixtureStore, req: &LmRequest, draw: u64, text: &str) {
    let key = fixture_key(req.stage, &req.prompt);
    if store.read(req.stage, &key, draw).as_deref() != Some(text) {
        store.write(req.stage, &key, draw, text).unwrap();
    }
}
