//! Equal-weight ensembling of per-model answer distributions.
//!
//! Averaging is done in exact rationals, so the result does not depend on
//! the order models are visited in, and only the final probabilities are
//! rounded to `f64`.

use std::collections::{BTreeMap, BTreeSet};

use num::{BigInt, BigRational, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonicalize::{apply_mapping, is_catch_all, CanonicalizeError, CategoryMapping};
use crate::synthesis::SynthesisRun;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DifferentialError {
    #[error("no valid models to ensemble")]
    NoValidModels,
    #[error("query `{0}` is not produced by the models")]
    UnknownQuery(String),
    #[error(transparent)]
    Canonicalize(#[from] CanonicalizeError),
}

/// How per-model distributions are weighted. Only equal weights exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Equal,
}

/// Category counts from one model's accepted samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDistribution {
    pub model_id: String,
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl ModelDistribution {
    pub fn new(model_id: impl Into<String>, counts: BTreeMap<String, u64>) -> Self {
        let total = counts.values().sum();
        Self {
            model_id: model_id.into(),
            counts,
            total,
        }
    }

    pub fn probability(&self, category: &str) -> f64 {
        match self.counts.get(category) {
            Some(&c) if self.total > 0 => c as f64 / self.total as f64,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialEntry {
    pub category: String,
    pub probability: f64,
    /// How many models sampled this category at least once.
    pub support: usize,
    pub is_catch_all: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialDistribution {
    pub query: String,
    pub n_models: usize,
    pub total_samples: u64,
    /// Descending probability, ties by category name.
    pub entries: Vec<DifferentialEntry>,
    /// Probability mass of the listed entries; below 1 after truncation.
    pub coverage: f64,
}

impl DifferentialDistribution {
    pub fn probability(&self, category: &str) -> f64 {
        self.entries
            .iter()
            .find(|e| e.category == category)
            .map_or(0.0, |e| e.probability)
    }

    pub fn categories(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.category.as_str()).collect()
    }

    /// One line per entry with a proportional bar.
    pub fn render_bars(&self, width: usize) -> String {
        let label = self.entries.iter().map(|e| e.category.chars().count()).max().unwrap_or(0);
        let mut out = format!(
            "{} ({} model{}, {} samples)\n",
            self.query,
            self.n_models,
            if self.n_models == 1 { "" } else { "s" },
            self.total_samples
        );
        for e in &self.entries {
            let filled = (e.probability * width as f64).round() as usize;
            out.push_str(&format!(
                "{:<label$}  {:<width$}  {:>6.2}%{}\n",
                e.category,
                "#".repeat(filled),
                e.probability * 100.0,
                if e.is_catch_all { "  (catch-all)" } else { "" },
            ));
        }
        if self.coverage < 1.0 - 1e-12 {
            out.push_str(&format!("shown: {:.2}% of the probability mass\n", self.coverage * 100.0));
        }
        out
    }
}

/// Average of the models' normalized distributions, each weighted 1/n.
/// Models with no samples are skipped.
pub fn ensemble_distributions(
    query: &str,
    models: &[ModelDistribution],
) -> Result<DifferentialDistribution, DifferentialError> {
    let models: Vec<&ModelDistribution> = models.iter().filter(|m| m.total > 0).collect();
    if models.is_empty() {
        return Err(DifferentialError::NoValidModels);
    }
    let n = BigInt::from(models.len());
    let mut mass: BTreeMap<&str, BigRational> = BTreeMap::new();
    let mut support: BTreeMap<&str, usize> = BTreeMap::new();
    for m in &models {
        let denominator = BigInt::from(m.total) * &n;
        for (category, &count) in &m.counts {
            if count == 0 {
                continue;
            }
            let share = BigRational::new(BigInt::from(count), denominator.clone());
            let slot = mass.entry(category).or_insert_with(BigRational::zero);
            *slot += share;
            *support.entry(category).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(BigRational, DifferentialEntry)> = mass
        .into_iter()
        .map(|(category, p)| {
            let entry = DifferentialEntry {
                category: category.to_string(),
                probability: p.to_f64().unwrap_or(0.0),
                support: support[category],
                is_catch_all: is_catch_all(category),
            };
            (p, entry)
        })
        .collect();
    entries.sort_by(|(pa, a), (pb, b)| pb.cmp(pa).then_with(|| a.category.cmp(&b.category)));
    let entries: Vec<DifferentialEntry> = entries.into_iter().map(|(_, e)| e).collect();
    Ok(DifferentialDistribution {
        query: query.to_string(),
        n_models: models.len(),
        total_samples: models.iter().map(|m| m.total).sum(),
        coverage: entries.iter().map(|e| e.probability).sum(),
        entries,
    })
}

/// The first `n` entries, without renormalizing.
pub fn top_n(dist: &DifferentialDistribution, n: usize) -> DifferentialDistribution {
    assert!(n >= 1, "top_n needs n >= 1");
    let entries: Vec<DifferentialEntry> = dist.entries.iter().take(n).cloned().collect();
    DifferentialDistribution {
        coverage: entries.iter().map(|e| e.probability).sum(),
        entries,
        ..dist.clone()
    }
}

/// Canonicalized counts of `query` for every valid model of the run.
pub fn model_distributions(
    run: &SynthesisRun,
    query: &str,
    mapping: &CategoryMapping,
) -> Result<Vec<ModelDistribution>, DifferentialError> {
    let mut out = Vec::new();
    for cand in run.valid_models() {
        let samples = cand.sample_set.as_ref().expect("valid models have samples");
        if samples.values(query).is_none() {
            return Err(DifferentialError::UnknownQuery(query.to_string()));
        }
        let mapped = apply_mapping(samples, mapping, query)?;
        out.push(ModelDistribution::new(cand.index.to_string(), mapped.counts(query)));
    }
    Ok(out)
}

/// The run's differential for one query.
pub fn ensemble(
    run: &SynthesisRun,
    query: &str,
    mapping: &CategoryMapping,
) -> Result<DifferentialDistribution, DifferentialError> {
    let models = model_distributions(run, query, mapping)?;
    ensemble_distributions(query, &models)
}
