//! Seedable, splittable random streams.
//!
//! Every random draw in a run descends from the run seed through a path of
//! child indices (model index, purpose, proposal index). Streams derived
//! from different paths are statistically independent and do not depend
//! on the order in which they are created, so sampling results are the
//! same whether proposals run sequentially or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator behind every stream.
pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeedStream(u64);

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream(seed)
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    pub fn child(self, index: u64) -> Self {
        SeedStream(splitmix64(self.0 ^ splitmix64(index.wrapping_add(GOLDEN_GAMMA))))
    }

    /// Child keyed by a purpose label rather than a number.
    pub fn named(self, label: &str) -> Self {
        self.child(fnv1a(label))
    }

    pub fn rng(self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
