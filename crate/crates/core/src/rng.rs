//! Named, independently seeded random streams.
//!
//! Every consumer of randomness draws from its own stream so that adding or
//! removing draws in one place never shifts the sequence seen elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derives a 64-bit seed from a base seed and a stream label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(seed: u64, label: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}

/// The four streams used by the trainer.
#[derive(Debug, Clone)]
pub struct TrainerStreams {
    /// Which scenes go into each batch.
    pub data: StreamRng,
    /// Proposal boxes (RPN surrogate).
    pub proposals: StreamRng,
    /// Feature augmentation noise.
    pub noise: StreamRng,
    /// Proposal subsampling for the detection losses.
    pub sampling: StreamRng,
    /// Proposal subsampling for the OOD head; kept apart so that scorers
    /// without a trainable head leave the detection path untouched.
    pub ood_sampling: StreamRng,
}

impl TrainerStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            data: stream(seed, "trainer/data"),
            proposals: stream(seed, "trainer/proposals"),
            noise: stream(seed, "trainer/noise"),
            sampling: stream(seed, "trainer/sampling"),
            ood_sampling: stream(seed, "trainer/ood-sampling"),
        }
    }
}
