//! Shared answer categories across models.
//!
//! Different synthesized models name the same condition differently
//! ("collapsed lung", "pneumothorax"). A language model proposes a grouping
//! of the normalized names, a manual override file is applied on top, and
//! every sampled value is rewritten to its canonical name before
//! ensembling.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lm::{LanguageModel, LmError, LmRequest, Stage};
use crate::ppl::{SampleSet, Value};
use crate::synthesis::prompts::{self, render};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CanonicalizeError {
    #[error("no categories to canonicalize")]
    Empty,
    #[error("category `{0}` is not in the mapping")]
    UnmappedCategory(String),
    #[error(transparent)]
    Lm(#[from] LmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Lm,
    Override,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub canonical: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CategoryMapping {
    /// Raw spelling, its normalized form and every canonical name, each
    /// mapped to a canonical name.
    pub entries: BTreeMap<String, MappingEntry>,
    /// SHA-256 of the prompt sent, if one was sent.
    pub source_prompt_hash: Option<String>,
    /// Set when the reply could not be read as a JSON object of strings
    /// and every category fell back to itself.
    #[serde(default)]
    pub lm_output_unparsable: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Lowercase, underscores to spaces, collapsed whitespace.
pub fn normalize(raw: &str) -> String {
    raw.to_lowercase().replace('_', " ").split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Names of residual categories that stand for "something not modeled".
pub fn is_catch_all(category: &str) -> bool {
    let n = normalize(category);
    n.starts_with("other") || n == "unknown"
}

/// Reads `{"raw": "canonical", ...}` from a possibly chatty reply.
fn parse_reply(text: &str) -> Option<BTreeMap<String, String>> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    let object: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text[start..=end]).ok()?;
    object
        .into_iter()
        .map(|(k, v)| v.as_str().map(|v| (normalize(&k), normalize(v))))
        .collect()
}

const HEART_ATTACK: &str = "heart attack";

impl CategoryMapping {
    /// Canonical name for a raw value.
    pub fn lookup(&self, raw: &str) -> Option<&str> {
        self.entries
            .get(raw)
            .or_else(|| self.entries.get(&normalize(raw)))
            .map(|e| e.canonical.as_str())
    }

    pub fn canonical_names(&self) -> BTreeSet<&str> {
        self.entries.values().map(|e| e.canonical.as_str()).collect()
    }

    /// Raw names the mapping knows nothing about.
    pub fn missing<'a>(&self, raws: impl IntoIterator<Item = &'a String>) -> BTreeSet<String> {
        raws.into_iter().filter(|r| self.lookup(r).is_none()).cloned().collect()
    }

    /// A mapping in which every name stands for itself.
    pub fn identity<'a>(raws: impl IntoIterator<Item = &'a String>) -> Self {
        let mut m = CategoryMapping::default();
        for r in raws {
            let n = normalize(r);
            m.insert(r, &n, Provenance::Identity);
            m.insert(&n, &n, Provenance::Identity);
        }
        m
    }

    fn insert(&mut self, raw: &str, canonical: &str, provenance: Provenance) {
        self.entries.insert(
            raw.to_string(),
            MappingEntry {
                canonical: canonical.to_string(),
                provenance,
            },
        );
    }

    /// Adds entries for raws not yet covered, keeping existing ones.
    pub fn extend_with(&mut self, other: &CategoryMapping) {
        for (k, v) in &other.entries {
            self.entries.entry(k.clone()).or_insert_with(|| v.clone());
        }
        self.warnings.extend(other.warnings.iter().cloned());
        self.lm_output_unparsable |= other.lm_output_unparsable;
    }
}

/// Builds the mapping for `raw_categories`: the language model groups the
/// normalized names, then `overrides` (raw → canonical) win. Names the
/// model leaves out, or sends to a name outside the input set, map to
/// themselves.
pub fn build_mapping(
    raw_categories: &BTreeSet<String>,
    lm: &dyn LanguageModel,
    overrides: &BTreeMap<String, String>,
) -> Result<CategoryMapping, CanonicalizeError> {
    if raw_categories.is_empty() {
        return Err(CanonicalizeError::Empty);
    }
    let normalized: BTreeSet<String> = raw_categories.iter().map(|r| normalize(r)).collect();
    let list: Vec<&String> = normalized.iter().collect();
    let prompt = render(
        prompts::CANONICALIZE,
        &[("categories", &serde_json::to_string(&list).expect("strings serialize"))],
    );
    let reply = lm.complete(&LmRequest::new(Stage::Canonicalize, prompt.clone()))?;

    let mut mapping = CategoryMapping {
        source_prompt_hash: Some(hex::encode(Sha256::digest(prompt.as_bytes()))),
        ..CategoryMapping::default()
    };
    let proposed = parse_reply(&reply.text).unwrap_or_else(|| {
        mapping.lm_output_unparsable = true;
        mapping.warnings.push("canonicalization reply is not a JSON object of strings".into());
        BTreeMap::new()
    });

    // one step per name, before chains are followed
    let mut step: BTreeMap<String, (String, Provenance)> = BTreeMap::new();
    for n in &normalized {
        let mut target = (n.clone(), Provenance::Identity);
        if let Some(t) = proposed.get(n) {
            if !normalized.contains(t) {
                mapping.warnings.push(format!("`{n}` mapped to new category `{t}`; kept as is"));
            } else if n == HEART_ATTACK && t != n {
                mapping.warnings.push(format!("`{n}` remapped to `{t}`; kept as is"));
            } else {
                target = (t.clone(), Provenance::Lm);
            }
        }
        step.insert(n.clone(), target);
    }
    let overrides: BTreeMap<String, String> = overrides.iter().map(|(k, v)| (normalize(k), normalize(v))).collect();
    for (k, v) in &overrides {
        if normalized.contains(k) {
            step.insert(k.clone(), (v.clone(), Provenance::Override));
        }
    }

    for n in &normalized {
        let (first, provenance) = step[n].clone();
        let mut seen = BTreeSet::from([n.clone()]);
        let mut current = first;
        let resolved = loop {
            if seen.contains(&current) {
                // cycle back to an earlier name, unless it is a self-entry
                break if current == *step.get(&current).map(|(t, _)| t).unwrap_or(&current) {
                    Some(current)
                } else {
                    None
                };
            }
            match step.get(&current) {
                Some((next, _)) if *next != current => {
                    seen.insert(current.clone());
                    current = next.clone();
                }
                _ => break Some(current),
            }
        };
        match resolved {
            Some(c) => mapping.insert(n, &c, provenance),
            None => {
                mapping.warnings.push(format!("mapping cycle through `{n}`; kept as is"));
                mapping.insert(n, n, Provenance::Identity);
            }
        }
    }
    // canonical names map to themselves
    let targets: Vec<(String, Provenance)> = mapping
        .entries
        .values()
        .map(|e| (e.canonical.clone(), e.provenance))
        .collect();
    for (c, provenance) in targets {
        mapping.entries.entry(c.clone()).or_insert(MappingEntry {
            canonical: c,
            provenance,
        });
    }
    for raw in raw_categories {
        let canonical = mapping.lookup(&normalize(raw)).expect("normalized names are mapped").to_string();
        let provenance = mapping.entries[&normalize(raw)].provenance;
        mapping.insert(raw, &canonical, provenance);
    }
    Ok(mapping)
}

/// Rewrites the string values of `query` to their canonical names.
/// Non-string values pass through unchanged.
pub fn apply_mapping(
    sample_set: &SampleSet,
    mapping: &CategoryMapping,
    query: &str,
) -> Result<SampleSet, CanonicalizeError> {
    let mut out = sample_set.clone();
    if let Some(values) = out.samples.get_mut(query) {
        for v in values.iter_mut() {
            if let Value::Str(s) = v {
                let canonical = mapping
                    .lookup(s)
                    .ok_or_else(|| CanonicalizeError::UnmappedCategory(s.clone()))?;
                *s = canonical.to_string();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use indexmap::IndexMap;

    use super::*;
    use crate::lm::ScriptedLm;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn replying(text: &'static str) -> impl LanguageModel {
        ScriptedLm::new("c", move |_: &LmRequest| Ok(text.to_string()))
    }

    #[test]
    fn groups_synonyms_and_applies_overrides() {
        let lm = replying(
            "Here you go:\n{\"collapsed lung\": \"pneumothorax\", \"pneumothorax\": \"pneumothorax\", \"heart attack\": \"heart attack\", \"anxiety disorder\": \"anxiety attack\", \"anxiety attack\": \"anxiety attack\"}",
        );
        let overrides = BTreeMap::from([
            ("anxiety disorder".to_string(), "anxiety".to_string()),
            ("anxiety attack".to_string(), "anxiety".to_string()),
        ]);
        let raws = set(&["collapsed lung", "pneumothorax", "heart_attack", "anxiety disorder", "anxiety attack"]);
        let m = build_mapping(&raws, &lm, &overrides).unwrap();
        let targets: BTreeSet<&str> = raws.iter().map(|r| m.lookup(r).unwrap()).collect();
        assert_eq!(targets, BTreeSet::from(["anxiety", "heart attack", "pneumothorax"]));
        assert_eq!(m.entries["anxiety attack"].provenance, Provenance::Override);
        assert_eq!(m.entries["collapsed lung"].provenance, Provenance::Lm);
        assert_eq!(m.lookup("anxiety"), Some("anxiety"));
        assert!(m.entries.values().all(|e| !e.canonical.contains('_')));
        // idempotent
        for e in m.entries.values() {
            assert_eq!(m.lookup(&e.canonical), Some(e.canonical.as_str()));
        }
    }

    #[test]
    fn distinct_conditions_stay_apart() {
        let lm = replying("{\"respiratory illness\": \"respiratory illness\", \"pneumonia\": \"pneumonia\"}");
        let m = build_mapping(&set(&["respiratory illness", "pneumonia"]), &lm, &BTreeMap::new()).unwrap();
        assert_eq!(m.lookup("pneumonia"), Some("pneumonia"));
        assert_eq!(m.lookup("respiratory illness"), Some("respiratory illness"));
    }

    #[test]
    fn model_cannot_invent_or_move_heart_attack() {
        let lm = replying("{\"heart attack\": \"myocardial infarction\", \"mi\": \"heart attack\", \"angina\": \"cardiac event\"}");
        let m = build_mapping(&set(&["heart attack", "mi", "angina"]), &lm, &BTreeMap::new()).unwrap();
        assert_eq!(m.lookup("heart attack"), Some("heart attack"));
        assert_eq!(m.lookup("mi"), Some("heart attack"));
        assert_eq!(m.lookup("angina"), Some("angina"));
        assert_eq!(m.warnings.len(), 2);
        let forced = build_mapping(
            &set(&["heart attack"]),
            &replying("{}"),
            &BTreeMap::from([("heart attack".to_string(), "myocardial infarction".to_string())]),
        )
        .unwrap();
        assert_eq!(forced.lookup("heart attack"), Some("myocardial infarction"));
    }

    #[test]
    fn unparsable_and_cyclic_replies() {
        let m = build_mapping(&set(&["Flu", "cold"]), &replying("I think they differ."), &BTreeMap::new()).unwrap();
        assert!(m.lm_output_unparsable);
        assert_eq!(m.lookup("Flu"), Some("flu"));
        assert_eq!(m.entries["flu"].provenance, Provenance::Identity);

        let m = build_mapping(&set(&["a", "b"]), &replying("{\"a\": \"b\", \"b\": \"a\"}"), &BTreeMap::new()).unwrap();
        assert_eq!(m.lookup("a"), Some("a"));
        assert_eq!(m.lookup("b"), Some("b"));

        let m = build_mapping(&set(&["a", "b", "c"]), &replying("{\"a\": \"b\", \"b\": \"c\"}"), &BTreeMap::new()).unwrap();
        assert_eq!(m.lookup("a"), Some("c"));
        assert!(build_mapping(&BTreeSet::new(), &replying("{}"), &BTreeMap::new()).is_err());
    }

    #[test]
    fn apply_conserves_counts() {
        let mut samples = IndexMap::new();
        let mut values = vec![Value::Str("pneumothorax".into()); 2000];
        values.extend(vec![Value::Str("collapsed_lung".into()); 500]);
        samples.insert("query2".to_string(), values);
        samples.insert("query1".to_string(), vec![Value::Bool(true); 2500]);
        let set = SampleSet {
            model_id: "1".into(),
            samples,
            accepted_count: 2500,
            proposed_count: 4000,
            wall_time: 0.0,
            seed: 1,
            target: 2500,
            budget_exhausted: false,
        };
        let lm = replying("{\"collapsed lung\": \"pneumothorax\"}");
        let m = build_mapping(&self::set(&["pneumothorax", "collapsed_lung"]), &lm, &BTreeMap::new()).unwrap();
        let out = apply_mapping(&set, &m, "query2").unwrap();
        assert_eq!(out.counts("query2"), BTreeMap::from([("pneumothorax".to_string(), 2500)]));
        let same = apply_mapping(&set, &m, "query1").unwrap();
        assert_eq!(same.counts("query1"), set.counts("query1"));
        let err = apply_mapping(&set, &CategoryMapping::default(), "query2").unwrap_err();
        assert!(matches!(err, CanonicalizeError::UnmappedCategory(_)));
    }

    #[test]
    fn catch_all_names() {
        assert!(is_catch_all("Other"));
        assert!(is_catch_all("other_ailment"));
        assert!(is_catch_all("unknown"));
        assert!(!is_catch_all("heart attack"));
    }
}
