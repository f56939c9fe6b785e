//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a stream identified by the tuple
//! `(root seed, instance id, method id, iteration, sample index)`. The first
//! four components are mixed with SplitMix64 into a ChaCha8 seed and the sample
//! index selects the ChaCha stream, so the draws for a given sample never depend
//! on how a batch is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Method ids used when deriving streams. Fixed so that traces stay
/// reproducible across releases.
pub mod method_id {
    pub const PROPOSED: u64 = 1;
    pub const PROPOSED_GENERAL: u64 = 2;
    pub const L2_RGD: u64 = 3;
    pub const SPSA: u64 = 4;
    pub const PSD_AD: u64 = 5;
    pub const RANDOM_SEARCH: u64 = 6;
    pub const NER: u64 = 100;
    pub const OUTPUT_INDEX: u64 = 101;
    pub const ORACLE: u64 = 102;
    pub const GENERATOR: u64 = 103;
    pub const DELTA_INIT: u64 = 104;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Identifies a family of streams for one (root, instance, method) cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub root: u64,
    pub instance: u64,
    pub method: u64,
}

impl StreamKey {
    pub fn new(root: u64, instance: u64, method: u64) -> Self {
        Self { root, instance, method }
    }

    /// Streams for one iteration of an algorithm.
    pub fn iteration(&self, iteration: u64) -> IterationStreams {
        let mut h = splitmix64(self.root);
        h = splitmix64(h ^ self.instance);
        h = splitmix64(h ^ self.method);
        h = splitmix64(h ^ iteration);
        IterationStreams { seed: h }
    }

    /// Shorthand for `self.iteration(iteration).sample(sample)`.
    pub fn rng(&self, iteration: u64, sample: u64) -> ChaCha8Rng {
        self.iteration(iteration).sample(sample)
    }

    pub fn with_method(&self, method: u64) -> Self {
        Self { method, ..*self }
    }
}

/// Per-iteration stream family; `sample(l)` gives the stream of draw `l`.
#[derive(Clone, Copy, Debug)]
pub struct IterationStreams {
    seed: u64,
}

impl IterationStreams {
    pub fn sample(&self, sample: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(sample);
        rng
    }
}
