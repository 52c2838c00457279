//! Execution policy for the data-parallel loops (per-parameter sensitivity
//! columns, finite-difference probes, verification sweeps).
//!
//! With the `parallel` feature disabled, [`Execution::Parallel`] silently runs
//! sequentially. Every parallel loop here is over independent items, so both
//! policies produce bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Map `f` over `0..n`, preserving order.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Apply `f(chunk_index, chunk)` to consecutive `chunk_len`-sized chunks.
///
/// `min_chunks_per_task` groups chunks so that tiny per-chunk work does not
/// drown in scheduling overhead.
pub fn for_each_chunk_mut<F>(exec: Execution, data: &mut [f64], chunk_len: usize, min_chunks_per_task: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        data.par_chunks_mut(chunk_len)
            .with_min_len(min_chunks_per_task.max(1))
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = (exec, min_chunks_per_task);
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Like [`for_each_chunk_mut`] over two slices chunked in lockstep
/// (`a` by `a_len`, `b` by `b_len`); both must yield the same chunk count.
pub fn for_each_chunk_pair_mut<F>(exec: Execution, a: &mut [f64], a_len: usize, b: &mut [f64], b_len: usize, f: F)
where
    F: Fn(usize, &mut [f64], &mut [f64]) + Sync + Send,
{
    if a_len == 0 || b_len == 0 {
        return;
    }
    debug_assert_eq!(a.len().div_ceil(a_len), b.len().div_ceil(b_len));
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        a.par_chunks_mut(a_len)
            .zip(b.par_chunks_mut(b_len))
            .enumerate()
            .for_each(|(i, (x, y))| f(i, x, y));
        return;
    }
    let _ = exec;
    a.chunks_mut(a_len)
        .zip(b.chunks_mut(b_len))
        .enumerate()
        .for_each(|(i, (x, y))| f(i, x, y));
}
