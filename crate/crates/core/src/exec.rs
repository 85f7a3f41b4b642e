//! Data-parallel cell execution.
//!
//! Experiment cells (seed × model × padding runs) are independent and own
//! their RNG state, so they map cleanly over a thread pool. Results collect
//! in input order, keeping reports byte-identical regardless of scheduling.
//! The `parallel` feature (default) backs [`map_cells`] with rayon; without
//! it the sequential path is used.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sequential reference path; always available.
pub fn map_seq<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

/// Rayon-backed path, available with the `parallel` feature.
#[cfg(feature = "parallel")]
pub fn map_par<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_par_iter().map(f).collect()
}

/// Map a function over independent work items, in parallel when enabled.
#[cfg(feature = "parallel")]
pub fn map_cells<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    map_par(items, f)
}

/// Map a function over independent work items, in parallel when enabled.
#[cfg(not(feature = "parallel"))]
pub fn map_cells<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    map_seq(items, f)
}
