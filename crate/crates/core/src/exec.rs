//! Data-parallel map with a sequential fallback.
//!
//! Results always come back in input order, so callers that reduce them in
//! order get the same answer whichever strategy ran.

use serde::{Deserialize, Serialize};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "ASCENT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    /// Falls back to sequential when the `parallel` feature is off.
    #[default]
    Parallel,
}

impl Exec {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => items.iter().map(f).collect(),
            Exec::Parallel => par_map(items, f),
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    init_threads();
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Sizes the global pool from `ASCENT_THREADS` on first use.
pub fn init_threads() {
    #[cfg(feature = "parallel")]
    {
        static INIT: std::sync::Once = std::sync::Once::new();
        INIT.call_once(|| {
            let threads = std::env::var(THREADS_ENV)
                .ok()
                .and_then(|v| v.trim().parse::<usize>().ok())
                .filter(|&n| n > 0);
            if let Some(n) = threads {
                if rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .is_err()
                {
                    log::warn!("worker pool already initialized; {THREADS_ENV} ignored");
                }
            }
        });
    }
}

/// Worker count the parallel strategy would use.
pub fn worker_count() -> usize {
    #[cfg(feature = "parallel")]
    {
        init_threads();
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
