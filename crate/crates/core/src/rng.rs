//! Reproducible standard-normal noise.
//!
//! A [`NoiseStream`] is a `(seed, stream)` pair. Draw `index` of a stream is a
//! pure function of the triple, so draws can be generated in any order or in
//! parallel and still be bit-identical across runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Stream-id namespaces. The low 48 bits carry an iteration or worker index.
pub mod purpose {
    pub const OPTIMIZE: u64 = 1;
    pub const MONITOR: u64 = 2;
    pub const SUBSAMPLE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const HMC: u64 = 5;
    pub const DATA: u64 = 6;
    pub const ORACLE: u64 = 7;
    pub const SPLIT: u64 = 8;
}

/// Builds a stream id from a namespace and an index.
pub fn stream_id(purpose: u64, index: u64) -> u64 {
    (purpose << 48) | (index & ((1 << 48) - 1))
}

/// Each draw owns a window of 2^32 ChaCha words; a Gaussian costs ~2.
const WORDS_PER_DRAW_LOG2: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseStream {
    pub seed: u64,
    pub stream: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn with_purpose(seed: u64, purpose: u64, index: u64) -> Self {
        Self::new(seed, stream_id(purpose, index))
    }

    /// RNG positioned at the start of draw `index`.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(u128::from(index) << WORDS_PER_DRAW_LOG2);
        rng
    }

    pub fn draw(&self, index: u64, dim: usize) -> NoiseDraw {
        let mut rng = self.rng(index);
        let eps = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        NoiseDraw {
            eps,
            seed: self.seed,
            stream: self.stream,
            index,
        }
    }
}

/// A standard-normal vector `ε` tagged with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub eps: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    pub index: u64,
}

impl NoiseDraw {
    /// A draw with explicit noise, for tests and hand-built examples.
    pub fn fixed(eps: Vec<f64>) -> Self {
        Self {
            eps,
            seed: 0,
            stream: 0,
            index: 0,
        }
    }
}
