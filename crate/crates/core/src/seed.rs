//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline draws from a seed derived from the
//! run's root seed and a labeled path such as `[synth, case 3, cand 1]`.
//! Derivation is a pure function, so parallel workers never share RNG state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// The splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes, finalized with [`mix64`].
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}

/// One labeled step of a seed path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathStep {
    pub label: String,
    pub index: u64,
}

impl PathStep {
    pub fn new(label: impl Into<String>, index: u64) -> Self {
        Self {
            label: label.into(),
            index,
        }
    }
}

/// Derive a 64-bit seed from `root` and a non-empty labeled path.
///
/// # Panics
/// If `path` is empty.
pub fn derive_seed(root: u64, path: &[PathStep]) -> u64 {
    assert!(!path.is_empty(), "seed path must be non-empty");
    let mut h = mix64(root ^ GOLDEN);
    for step in path {
        h = mix64(h.wrapping_add(hash_str(&step.label)));
        h = mix64(
            h ^ step
                .index
                .wrapping_mul(GOLDEN)
                .wrapping_add(0x632b_e59b_d9b4_e019),
        );
    }
    mix64(h ^ path.len() as u64)
}

/// Builder-style helper: `SeedPath::root(42).push("synth", 0).push("case", 3).seed()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedPath {
    root: u64,
    steps: Vec<PathStep>,
}

impl SeedPath {
    pub fn root(root: u64) -> Self {
        Self {
            root,
            steps: Vec::new(),
        }
    }

    pub fn push(mut self, label: &str, index: u64) -> Self {
        self.steps.push(PathStep::new(label, index));
        self
    }

    pub fn seed(&self) -> u64 {
        derive_seed(self.root, &self.steps)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed())
    }
}

/// Map a 64-bit hash to a uniform float in (0, 1].
#[inline]
pub fn unit_open_closed(h: u64) -> f64 {
    ((h >> 11) as f64 + 1.0) / (1u64 << 53) as f64
}
