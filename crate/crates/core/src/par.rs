//! Data-parallel map with a sequential fallback.
//!
//! Per-receiver work inside a cycle is independent (each receiver has its own
//! seeded noise stream), so it can run on rayon without affecting results:
//! outputs are collected in index order and every floating-point operation
//! stays inside its own receiver's stream. Building without the `parallel`
//! feature swaps in a plain sequential map with identical output.

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential map regardless of feature flags. Exists so benchmarks can
/// compare both paths within one build.
pub fn map_indexed_serial<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}
