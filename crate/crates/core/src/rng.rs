//! Deterministic random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 generator keyed
//! by an [`RngSeed`]: the 64-bit `seed` is the key and `stream_id` selects one
//! of ChaCha's 2^64 independent streams. Work that fans out (one excursion
//! batch per datum, one trajectory per run) derives a child stream per work
//! item with [`RngSeed::derive`], so results do not depend on how many
//! workers execute the items or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngSeed {
    pub const fn new(seed: u64) -> Self {
        Self { seed, stream_id: 0 }
    }

    pub const fn with_stream(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Child stream for work item `tag`. Derivation is a pure function of
    /// `(stream_id, tag)`, so nested derivations form a deterministic tree.
    pub fn derive(self, tag: u64) -> Self {
        let mixed = splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D)));
        Self {
            seed: self.seed,
            stream_id: mixed,
        }
    }

    pub fn rng(self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

impl Default for RngSeed {
    fn default() -> Self {
        Self::new(0)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream tags used across modules. Keeping them in one place avoids two
/// subsystems silently sharing a stream.
pub(crate) mod tags {
    pub const EPOCH: u64 = 1;
    pub const PENALTY: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SIGNS: u64 = 4;
    pub const JOINT: u64 = 5;
}
