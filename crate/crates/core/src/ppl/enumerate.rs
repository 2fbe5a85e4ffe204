//! Exact posterior by exhaustive expansion of discrete random choices.
//!
//! The model is re-executed once per path. A trail records, for every
//! random choice on the current path, the alternatives with non-zero
//! probability and which one was taken; after each execution the trail is
//! advanced like an odometer. Conditions prune paths as soon as they fail.
//!
//! Path weights are products of branch probabilities taken in sorted order,
//! and per-value masses are sums of path weights taken in sorted order, so
//! the result does not depend on the order in which choices or paths were
//! visited. Permuting condition statements therefore leaves the output
//! bit-for-bit unchanged.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::error::EnumerateError;
use super::interp::{Chooser, Halt, Machine};
use super::program::Program;

pub const DEFAULT_PATH_CAP: u64 = 10_000_000;

/// Exact posterior marginals per query. Equality ignores `paths`, which
/// depends on how early conditions prune.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactDistribution {
    /// Query name to (value key to probability).
    pub queries: IndexMap<String, BTreeMap<String, f64>>,
    /// Prior probability that every condition holds.
    pub evidence: f64,
    /// Execution paths explored, accepted or not.
    pub paths: u64,
}

impl PartialEq for ExactDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.queries == other.queries && self.evidence == other.evidence
    }
}

impl ExactDistribution {
    pub fn probability(&self, query: &str, key: &str) -> f64 {
        self.queries
            .get(query)
            .and_then(|d| d.get(key))
            .copied()
            .unwrap_or(0.0)
    }
}

struct Branch {
    /// (option index, probability) for each alternative with mass.
    options: Vec<(usize, f64)>,
    cursor: usize,
}

struct PathChooser {
    trail: Vec<Branch>,
    depth: usize,
    factors: Vec<f64>,
}

impl PathChooser {
    fn choose(&mut self, options: impl FnOnce() -> Vec<(usize, f64)>) -> usize {
        if self.depth == self.trail.len() {
            self.trail.push(Branch {
                options: options(),
                cursor: 0,
            });
        }
        let branch = &self.trail[self.depth];
        let (index, prob) = branch.options[branch.cursor];
        self.factors.push(prob);
        self.depth += 1;
        index
    }

    /// Moves to the next unexplored path. Returns false when done.
    fn advance(&mut self) -> bool {
        self.trail.truncate(self.depth);
        self.depth = 0;
        self.factors.clear();
        while let Some(last) = self.trail.last_mut() {
            if last.cursor + 1 < last.options.len() {
                last.cursor += 1;
                return true;
            }
            self.trail.pop();
        }
        false
    }
}

impl Chooser for PathChooser {
    fn flip(&mut self, p: f64) -> Result<bool, Halt> {
        let i = self.choose(|| {
            let mut opts = Vec::with_capacity(2);
            if p > 0.0 {
                opts.push((1, p));
            }
            if p < 1.0 {
                opts.push((0, 1.0 - p));
            }
            opts
        });
        Ok(i == 1)
    }

    fn categorical(&mut self, weights: &[f64]) -> Result<usize, Halt> {
        Ok(self.choose(|| {
            let total: f64 = weights.iter().sum();
            weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w > 0.0)
                .map(|(i, w)| (i, w / total))
                .collect()
        }))
    }

    fn gaussian(&mut self, _mu: f64, _sigma: f64) -> Result<f64, Halt> {
        Err(Halt::Continuous)
    }
}

fn sorted_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.into_iter().sum()
}

pub fn enumerate(program: &Program) -> Result<ExactDistribution, EnumerateError> {
    enumerate_with_cap(program, DEFAULT_PATH_CAP)
}

pub fn enumerate_with_cap(program: &Program, cap: u64) -> Result<ExactDistribution, EnumerateError> {
    if program.uses_gaussian() {
        return Err(EnumerateError::ContinuousUnsupported);
    }
    let mut machine = Machine::new(program);
    let mut chooser = PathChooser {
        trail: Vec::new(),
        depth: 0,
        factors: Vec::new(),
    };
    let mut mass: IndexMap<String, BTreeMap<String, Vec<f64>>> = program
        .query_names()
        .map(|q| (q.to_string(), BTreeMap::new()))
        .collect();
    let mut accepted_weights = Vec::new();
    let mut paths = 0u64;
    loop {
        paths += 1;
        if paths > cap {
            return Err(EnumerateError::PathExplosion { cap });
        }
        match machine.run(&mut chooser) {
            Ok(sample) => {
                let mut factors = chooser.factors.clone();
                factors.sort_by(f64::total_cmp);
                let weight: f64 = factors.iter().product();
                accepted_weights.push(weight);
                for (query, value) in sample {
                    mass.get_mut(&query)
                        .expect("query names fixed")
                        .entry(value.category_key())
                        .or_default()
                        .push(weight);
                }
            }
            Err(Halt::Reject) => {}
            Err(Halt::Error(e)) => return Err(e.into()),
            Err(Halt::Continuous) => return Err(EnumerateError::ContinuousUnsupported),
        }
        if !chooser.advance() {
            break;
        }
    }
    let evidence = sorted_sum(accepted_weights);
    if evidence <= 0.0 {
        return Err(EnumerateError::ZeroEvidence);
    }
    let queries = mass
        .into_iter()
        .map(|(q, values)| {
            let dist = values
                .into_iter()
                .map(|(k, ws)| (k, sorted_sum(ws) / evidence))
                .collect();
            (q, dist)
        })
        .collect();
    Ok(ExactDistribution {
        queries,
        evidence,
        paths,
    })
}
