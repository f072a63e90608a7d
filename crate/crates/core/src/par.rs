//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Exec::Parallel`] runs on the rayon
//! pool; without it every call degrades to the sequential path. Reductions
//! always combine partial results in index order so that the answer does not
//! depend on the number of worker threads.

/// Execution strategy for the data-parallel inner loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Rows per chunk for chunked reductions. Fixed so the summation tree does
/// not change with the thread count.
pub const CHUNK: usize = 4096;

/// `(0..count).map(f).collect()`, possibly in parallel.
pub fn map_indexed<U, F>(exec: Exec, count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..count).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..count).map(f).collect()
}

/// Maps `f` over `[start, end)` ranges of at most [`CHUNK`] items and returns
/// the per-chunk results in order.
pub fn map_chunks<U, F>(exec: Exec, count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(std::ops::Range<usize>) -> U + Sync + Send,
{
    let chunks = count.div_ceil(CHUNK);
    map_indexed(exec, chunks, |k| {
        let start = k * CHUNK;
        f(start..(start + CHUNK).min(count))
    })
}
