//! Deterministic seed derivation.
//!
//! A run has one master seed. Every stage (universe, replication, sampling,
//! generation, subset selection) and every sweep cell receives its own
//! sub-seed derived from the master seed and a stable label, so any single
//! stage or cell can be replayed without re-running the others and results
//! do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG used throughout the crate. ChaCha output is stable across platforms
/// and crate versions, which `StdRng` does not promise.
pub type LabRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes; only used to turn labels into integers.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives the sub-seed for `label` from `seed`.
pub fn derive(seed: u64, label: &str) -> u64 {
    mix64(seed ^ mix64(label_hash(label)))
}

/// Derives the sub-seed for `(label, index)`, e.g. the i-th trial of a cell.
pub fn derive_indexed(seed: u64, label: &str, index: u64) -> u64 {
    mix64(derive(seed, label) ^ mix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Per-stage seeds for one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StageSeeds {
    pub universe: u64,
    pub replication: u64,
    pub sampling: u64,
    pub generation: u64,
    pub selection: u64,
}

impl StageSeeds {
    pub fn from_master(seed: u64) -> Self {
        StageSeeds {
            universe: derive(seed, "universe"),
            replication: derive(seed, "replication"),
            sampling: derive(seed, "sampling"),
            generation: derive(seed, "generation"),
            selection: derive(seed, "selection"),
        }
    }
}
