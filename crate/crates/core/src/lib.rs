//! Model synthesis from clinical vignettes, inference over the synthesized
//! MedPPL programs, and ensembling into a differential diagnosis.
//!
//! [`runner::execute_run`] ties the stages together: [`synthesis`] produces
//! k candidate models, [`canonicalize`] aligns their answer names,
//! [`differential`] averages them and [`store`] writes the run to disk.
//! [`intervene`] edits one stored model and reruns its inference.

pub mod canonicalize;
pub mod clock;
pub mod differential;
pub mod intervene;
pub mod lm;
pub mod ppl;
pub mod rng;
pub mod runner;
mod serde_util;
pub mod store;
pub mod synthesis;
