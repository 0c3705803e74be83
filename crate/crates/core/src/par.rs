//! Batch execution of independent runs. Each run owns its counters, so the
//! only shared state is the read-only instance data.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Sequential,
    /// Rayon pool with this many workers (0 = rayon's default). Falls back
    /// to sequential when the `parallel` feature is off.
    Parallel(usize),
}

impl Execution {
    /// `Parallel(n)` for `n > 1`, sequential otherwise.
    pub fn from_threads(n: usize) -> Self {
        if n > 1 {
            Execution::Parallel(n)
        } else {
            Execution::Sequential
        }
    }

    /// Reads `ACGD_KIT_THREADS` (default 1).
    pub fn from_env() -> Result<Self> {
        match std::env::var("ACGD_KIT_THREADS") {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .map(Self::from_threads)
                .map_err(|_| Error::InvalidParameter(format!("ACGD_KIT_THREADS must be an integer, got {v:?}"))),
            Err(_) => Ok(Execution::Sequential),
        }
    }
}

/// Applies `f` to every item, keeping input order in the output.
pub fn map_batch<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        Execution::Sequential => items.iter().map(f).collect(),
        Execution::Parallel(threads) => parallel_map(threads, items, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(threads: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(_threads: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}
