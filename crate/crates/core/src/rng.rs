//! Seeded, independently derived random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by
//! `(seed, step, purpose)`. Skipping one consumer (e.g. the discriminator
//! when it is disabled) never shifts the numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named purposes, so that two call sites never share a stream by accident.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Graph = 1,
    Split = 2,
    Init = 3,
    Seeds = 4,
    Subgraph = 5,
    EdgeMask = 6,
    Negatives = 7,
    FeatureMask = 8,
    GenDropout = 9,
    DiscDropout = 10,
    Positives = 11,
    FeatureBalance = 12,
    RandomEdges = 13,
    Finetune = 14,
    FinetuneDropout = 15,
    Corruption = 16,
    LinkEval = 17,
    Coin = 18,
}

/// Builds the stream for `(seed, step, purpose)`.
pub fn stream(seed: u64, step: u64, purpose: Stream) -> Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[24..32].copy_from_slice(b"dipgnn\0\0");
    ChaCha8Rng::from_seed(key)
}

/// Convenience for tests and one-off tools: a plain seeded generator.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
