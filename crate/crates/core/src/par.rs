//! Deterministic chunked reductions over sample ranges.
//!
//! Chunk boundaries are fixed and partial results are combined in chunk order,
//! so the floating-point result does not depend on the thread count.
//! `INFPROJ_THREADS=1` forces the sequential path.

use rayon::prelude::*;
use std::ops::Range;
use std::sync::OnceLock;

pub const CHUNK: usize = 2048;

/// Thread cap from `INFPROJ_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    static CAP: OnceLock<Option<usize>> = OnceLock::new();
    *CAP.get_or_init(|| {
        std::env::var("INFPROJ_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&v| v > 0)
    })
}

/// Maps each fixed-size chunk of `0..n` and folds the partials left to right.
pub fn map_reduce<T, M, F>(n: usize, map: M, fold: F) -> Option<T>
where
    T: Send,
    M: Fn(Range<usize>) -> T + Sync,
    F: Fn(T, T) -> T,
{
    let chunks = n.div_ceil(CHUNK);
    let range = |c: usize| c * CHUNK..((c + 1) * CHUNK).min(n);
    let partials: Vec<T> = if chunks <= 1 || thread_cap() == Some(1) {
        (0..chunks).map(|c| map(range(c))).collect()
    } else {
        (0..chunks).into_par_iter().map(|c| map(range(c))).collect()
    };
    partials.into_iter().reduce(fold)
}

pub fn sum(n: usize, f: impl Fn(Range<usize>) -> f64 + Sync) -> f64 {
    map_reduce(n, f, |a, b| a + b).unwrap_or(0.0)
}

/// Sums dense vectors of length `dim` produced per chunk.
pub fn sum_vec(n: usize, dim: usize, f: impl Fn(Range<usize>, &mut [f64]) + Sync) -> Vec<f64> {
    map_reduce(
        n,
        |r| {
            let mut acc = vec![0.0; dim];
            f(r, &mut acc);
            acc
        },
        |mut a, b| {
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            a
        },
    )
    .unwrap_or_else(|| vec![0.0; dim])
}
