//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper preserves input order in its output, so results never
//! depend on thread scheduling. Reductions over the collected values are
//! left to the caller and run sequentially in index order.

/// Execution strategy for the data-parallel loops in this crate.
///
/// `Parallel` falls back to sequential execution when the crate is built
/// without the `parallel` feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    #[default]
    Parallel,
}

impl Parallelism {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// Evaluates `f(0..n)` and collects the results in index order.
pub fn map_range<T, F>(n: usize, mode: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Maps over a slice, preserving order.
pub fn map_slice<'a, S, T, F>(items: &'a [S], mode: Parallelism, f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&'a S) -> T + Sync + Send,
{
    map_range(items.len(), mode, |i| f(&items[i]))
}

/// Like [`map_range`] for fallible work; the first error in index order wins.
pub fn try_map_range<T, E, F>(n: usize, mode: Parallelism, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_range(n, mode, f).into_iter().collect()
}
