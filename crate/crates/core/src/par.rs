//! Deterministic data-parallel reductions.
//!
//! Work over `n` items is cut into fixed-size chunks. Each chunk fills its own
//! accumulator, and the chunk accumulators are combined by a pairwise tree in
//! chunk order. The chunk layout never depends on the number of workers, so the
//! parallel and sequential paths produce bitwise-identical results.

use std::ops::Range;

/// Number of items per reduction chunk.
pub const CHUNK: usize = 4096;

/// How chunk work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled, otherwise
    /// falls back to sequential execution.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

pub fn chunk_ranges(n: usize, chunk: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(n))
        .collect()
}

/// Maps each chunk to an accumulator of length `width` and tree-sums them.
///
/// `fill` receives the chunk index, its item range and a zeroed accumulator.
pub fn chunked_sum<F>(exec: Execution, n: usize, width: usize, fill: F) -> Vec<f64>
where
    F: Fn(usize, Range<usize>, &mut [f64]) + Sync,
{
    let ranges = chunk_ranges(n, CHUNK);
    let run = |(idx, range): (usize, Range<usize>)| {
        let mut acc = vec![0.0; width];
        fill(idx, range, &mut acc);
        acc
    };
    let parts = map_indexed(exec, ranges, run);
    tree_sum(parts, width)
}

/// Order-preserving map, parallel when `exec` allows it.
pub fn map_indexed<T, U, F>(exec: Execution, items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn((usize, T)) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.into_par_iter().enumerate().map(f).collect();
    }
    let _ = exec;
    items.into_iter().enumerate().map(f).collect()
}

/// Pairwise summation of equal-length vectors, combining neighbours level by level.
pub fn tree_sum(mut parts: Vec<Vec<f64>>, width: usize) -> Vec<f64> {
    if parts.is_empty() {
        return vec![0.0; width];
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut left) = it.next() {
            if let Some(right) = it.next() {
                for (l, r) in left.iter_mut().zip(&right) {
                    *l += r;
                }
            }
            next.push(left);
        }
        parts = next;
    }
    parts.pop().unwrap()
}
