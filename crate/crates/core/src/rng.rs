//! Per-replication random streams.
//!
//! Every replication owns one ChaCha8 stream keyed by `(base_seed, replication)`.
//! ChaCha is counter based, so streams for different replications never overlap
//! and can be generated in any order or on any thread.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

/// Identifies the stream that produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedRecord {
    pub base_seed: u64,
    pub replication: u64,
}

#[derive(Debug, Clone)]
pub struct ReplicationStream {
    seed: SeedRecord,
    inner: ChaCha8Rng,
}

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

impl ReplicationStream {
    pub fn new(base_seed: u64, replication: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(base_seed);
        inner.set_stream(replication);
        ReplicationStream {
            seed: SeedRecord {
                base_seed,
                replication,
            },
            inner,
        }
    }

    pub fn seed(&self) -> SeedRecord {
        self.seed
    }

    /// Uniform on the open interval (0, 1): midpoints of a 2^-53 grid.
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * TWO_POW_NEG_53
    }

    /// Number of 32-bit words consumed so far.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Jumps to an absolute position in the stream.
    pub fn set_word_pos(&mut self, pos: u128) {
        self.inner.set_word_pos(pos);
    }
}
