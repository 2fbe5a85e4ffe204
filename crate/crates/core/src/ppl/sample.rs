//! Forward execution and rejection sampling.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::error::RuntimeError;
use super::interp::{Chooser, Halt, Machine};
use super::program::Program;
use super::value::Value;
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub status: OutcomeStatus,
    /// Query values; present iff accepted.
    pub sample: Option<IndexMap<String, Value>>,
    pub trace_choices: u64,
}

/// Resource limits for one rejection-sampling call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    #[serde(with = "crate::serde_util::duration_secs")]
    pub wall_clock: Duration,
    /// `None` leaves only the wall clock as a limit.
    pub max_proposals: Option<u64>,
}

impl Budget {
    pub fn new(wall_clock: Duration, max_proposals: Option<u64>) -> Self {
        Self {
            wall_clock,
            max_proposals,
        }
    }

    pub fn proposals(max_proposals: u64) -> Self {
        Self {
            wall_clock: Duration::from_secs(3600),
            max_proposals: Some(max_proposals),
        }
    }
}

/// Accepted draws from one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub model_id: String,
    /// Query name to accepted values, in query-record order.
    pub samples: IndexMap<String, Vec<Value>>,
    pub accepted_count: u64,
    pub proposed_count: u64,
    /// Seconds spent sampling.
    pub wall_time: f64,
    pub seed: u64,
    pub target: u64,
    /// Set when the budget ran out before `target` samples were accepted.
    pub budget_exhausted: bool,
}

impl SampleSet {
    pub fn values(&self, query: &str) -> Option<&[Value]> {
        self.samples.get(query).map(Vec::as_slice)
    }

    /// Count of each distinct value (by category key) for `query`.
    pub fn counts(&self, query: &str) -> BTreeMap<String, u64> {
        let mut counts = BTreeMap::new();
        for v in self.values(query).unwrap_or(&[]) {
            *counts.entry(v.category_key()).or_insert(0) += 1;
        }
        counts
    }

    /// Relative frequency of each distinct value for `query`.
    pub fn frequencies(&self, query: &str) -> BTreeMap<String, f64> {
        let n = self.accepted_count as f64;
        self.counts(query)
            .into_iter()
            .map(|(k, c)| (k, c as f64 / n))
            .collect()
    }
}

pub(crate) struct RngChooser<'r, R: Rng> {
    pub rng: &'r mut R,
}

impl<R: Rng> Chooser for RngChooser<'_, R> {
    fn flip(&mut self, p: f64) -> Result<bool, Halt> {
        Ok(self.rng.random::<f64>() < p)
    }

    fn categorical(&mut self, weights: &[f64]) -> Result<usize, Halt> {
        let total: f64 = weights.iter().sum();
        let mut u = self.rng.random::<f64>() * total;
        let mut last = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                if u < w {
                    return Ok(i);
                }
                u -= w;
                last = i;
            }
        }
        Ok(last)
    }

    fn gaussian(&mut self, mu: f64, sigma: f64) -> Result<f64, Halt> {
        let z: f64 = self.rng.sample(StandardNormal);
        Ok(mu + sigma * z)
    }
}

/// Executes the model once with the given random source.
pub fn run_once<R: Rng>(program: &Program, rng: &mut R) -> Result<Outcome, RuntimeError> {
    let mut machine = Machine::new(program);
    run_with(&mut machine, rng)
}

fn run_with<R: Rng>(machine: &mut Machine<'_>, rng: &mut R) -> Result<Outcome, RuntimeError> {
    let result = machine.run(&mut RngChooser { rng });
    let trace_choices = machine.choices();
    match result {
        Ok(sample) => Ok(Outcome {
            status: OutcomeStatus::Accepted,
            sample: Some(sample),
            trace_choices,
        }),
        Err(Halt::Reject) => Ok(Outcome {
            status: OutcomeStatus::Rejected,
            sample: None,
            trace_choices,
        }),
        Err(Halt::Error(e)) => Err(e),
        Err(Halt::Continuous) => unreachable!("sampling never refuses continuous draws"),
    }
}

/// How often the wall clock is consulted, in proposals.
const CLOCK_CHECK_INTERVAL: u64 = 256;

/// Draws proposals until `target` are accepted or the budget runs out.
///
/// Proposal `i` uses the stream `SeedStream::new(seed).child(i)`, so the
/// result depends only on the program, `target`, the proposal limit and
/// the seed (unless the wall clock intervenes).
pub fn rejection_sample(
    program: &Program,
    target: u64,
    budget: &Budget,
    seed: u64,
) -> Result<SampleSet, RuntimeError> {
    rejection_sample_with_id(program, "model", target, budget, seed)
}

pub fn rejection_sample_with_id(
    program: &Program,
    model_id: &str,
    target: u64,
    budget: &Budget,
    seed: u64,
) -> Result<SampleSet, RuntimeError> {
    assert!(target >= 1, "target must be at least one sample");
    let started = Instant::now();
    let stream = SeedStream::new(seed);
    let mut machine = Machine::new(program);
    let mut samples: IndexMap<String, Vec<Value>> = program
        .query_names()
        .map(|q| (q.to_string(), Vec::new()))
        .collect();
    let mut accepted = 0u64;
    let mut proposed = 0u64;
    let mut exhausted = false;
    while accepted < target {
        if budget.max_proposals.is_some_and(|max| proposed >= max) {
            exhausted = true;
            break;
        }
        if proposed % CLOCK_CHECK_INTERVAL == 0 && started.elapsed() >= budget.wall_clock {
            exhausted = true;
            break;
        }
        let mut rng = stream.child(proposed).rng();
        proposed += 1;
        let outcome = run_with(&mut machine, &mut rng)?;
        if let Some(sample) = outcome.sample {
            for (k, v) in sample {
                samples.get_mut(&k).expect("query names fixed").push(v);
            }
            accepted += 1;
        }
    }
    Ok(SampleSet {
        model_id: model_id.to_string(),
        samples,
        accepted_count: accepted,
        proposed_count: proposed,
        wall_time: started.elapsed().as_secs_f64(),
        seed,
        target,
        budget_exhausted: exhausted,
    })
}
