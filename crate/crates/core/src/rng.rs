//! Seed derivation for reproducible, independent random streams.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` whose seed is a
//! pure function of a master seed and a path of integer labels, so any
//! replication, stage or scenario can be regenerated in isolation and in any
//! thread order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a label.
pub fn derive(seed: u64, label: u64) -> u64 {
    mix64(seed ^ mix64(label.wrapping_add(0x2545_F491_4F6C_DD1D)))
}

/// An RNG for `seed`.
pub fn rng_from(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream purposes, kept distinct so that e.g. stage samples and
/// cross-validation samples never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Replication = 1,
    StageSample = 2,
    CrossValidation = 3,
    Reference = 4,
    Evaluation = 5,
    Pilot = 6,
    Scenario = 7,
}

/// A master seed with labelled sub-streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    master: u64,
}

impl SeedStream {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Seed for `(purpose, index)`.
    pub fn seed(&self, purpose: Purpose, index: u64) -> u64 {
        derive(derive(self.master, purpose as u64), index)
    }

    /// Independent child stream, e.g. for replication `index`.
    pub fn child(&self, purpose: Purpose, index: u64) -> SeedStream {
        SeedStream::new(self.seed(purpose, index))
    }

    pub fn rng(&self, purpose: Purpose, index: u64) -> StreamRng {
        rng_from(self.seed(purpose, index))
    }
}
