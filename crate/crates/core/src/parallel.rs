//! Batch-level data parallelism.
//!
//! With the `parallel` feature, [`map_collect`] fans out over rayon's pool;
//! without it the sequential path is used. Results always come back in input
//! order so downstream reductions are bitwise reproducible regardless of the
//! thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_collect_sequential(items, f)
    }
}

pub fn map_collect_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
