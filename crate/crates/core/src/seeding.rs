//! Deterministic RNG substreams.
//!
//! Every stochastic stage of a run (corpus partitioning, pair sampling,
//! mining, augmentation, dropout, ...) derives its own generator from the run
//! seed, a short label, and stage indices. Streams are therefore independent
//! of each other and of call order, which is what makes same-seed reruns
//! reproduce artifacts byte for byte.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives an independent generator from `seed`, a stage label, and indices
/// such as epoch/step/sample counters.
pub fn stream(seed: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut h = Fnv1a::new();
    h.write(&seed.to_le_bytes());
    h.write(label.as_bytes());
    for ix in indices {
        h.write(&ix.to_le_bytes());
    }
    ChaCha8Rng::seed_from_u64(h.finish())
}

/// Folds an identifier into a stream index, for stages keyed by names
/// rather than counters.
pub fn tag(text: &str) -> u64 {
    let mut h = Fnv1a::new();
    h.write(text.as_bytes());
    h.finish()
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x1000_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}
