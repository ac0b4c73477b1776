//! Counter-based RNG streams: every run or sample gets an independent,
//! reproducible generator derived from the master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids for the different consumers of randomness.
pub mod streams {
    pub const SEEDS: u64 = 1;
    pub const TRUTH: u64 = 2;
    pub const EXECUTION_NOISE: u64 = 3;
    pub const BASELINE: u64 = 4;
    pub const PERTURBATION: u64 = 5;
    pub const CLUSTERING: u64 = 6;
    /// Per-run sub-seeds are `RUN_BASE + run`.
    pub const RUN_BASE: u64 = 1 << 32;
}

/// Master seed for run `run` of an experiment.
pub fn run_seed(master_seed: u64, run: usize) -> u64 {
    use rand::RngCore;
    stream(master_seed, streams::RUN_BASE + run as u64).next_u64()
}
