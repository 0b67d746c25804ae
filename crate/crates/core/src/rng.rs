//! Seeded, splittable randomness. Every consumer derives its own ChaCha stream
//! from `(seed, stream id)` so independent sample sequences never share state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SolverRng = ChaCha8Rng;

/// Stream identifiers used by the solvers.
pub mod streams {
    pub const SPLIT: u64 = 1;
    pub const SUBSAMPLE: u64 = 2;
    pub const X_STAGE: u64 = 10;
    pub const Y_STAGE: u64 = 11;
    pub const STAGE_SAMPLING: u64 = 12;
    pub const DIAGNOSTIC: u64 = 13;
    pub const MSPG_BATCH: u64 = 20;
    pub const MSPG_OUTPUT: u64 = 21;
    pub const BASELINE_BATCH: u64 = 30;
    pub const SPG: u64 = 40;
}

pub fn stream(seed: u64, stream: u64) -> SolverRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fills `out` with `m` indices drawn uniformly with replacement from `0..n`.
pub fn sample_batch<R: Rng>(rng: &mut R, n: usize, m: usize, out: &mut Vec<usize>) {
    out.clear();
    out.extend((0..m).map(|_| rng.random_range(0..n)));
}

/// Draws an index in `1..=weights.len()` with probability proportional to the weight.
pub fn sample_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return k + 1;
        }
        u -= w;
    }
    weights.len()
}
