//! Time source for run ids and stage timestamps.
//!
//! Replay runs use the logical clock so two executions persist identical
//! bytes: it starts at a fixed epoch and advances one tick per reading.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

/// 2026-01-01T00:00:00Z in Unix milliseconds.
pub const LOGICAL_EPOCH_MS: u64 = 1_767_225_600_000;

#[derive(Debug, Clone)]
pub enum Clock {
    System,
    Logical(Arc<AtomicU64>),
}

impl Clock {
    pub fn logical() -> Self {
        Clock::Logical(Arc::new(AtomicU64::new(LOGICAL_EPOCH_MS)))
    }

    pub fn is_logical(&self) -> bool {
        matches!(self, Clock::Logical(_))
    }

    /// Unix milliseconds.
    pub fn now_ms(&self) -> u64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            Clock::Logical(t) => t.fetch_add(1, Ordering::SeqCst),
        }
    }

    /// Seconds to persist for a measured duration: the logical clock
    /// records zero so persisted bytes do not depend on machine speed.
    pub fn elapsed_secs(&self, measured: f64) -> f64 {
        match self {
            Clock::System => measured,
            Clock::Logical(_) => 0.0,
        }
    }
}
