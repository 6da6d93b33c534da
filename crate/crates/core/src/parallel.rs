//! Order-preserving map over independent items.
//!
//! With the `parallel` feature the work runs on rayon; without it, or with
//! `jobs == Some(1)`, it runs sequentially. Output order always matches
//! input order, so results do not depend on the execution strategy.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Parallelism bound. `None` uses every available core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Jobs(pub Option<usize>);

impl Jobs {
    pub const SEQUENTIAL: Jobs = Jobs(Some(1));

    pub fn is_sequential(self) -> bool {
        cfg!(not(feature = "parallel")) || self.0 == Some(1)
    }
}

pub fn map_indexed<T, R, F>(items: &[T], jobs: Jobs, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    if jobs.is_sequential() {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    parallel_map(items, jobs, f)
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(items: &[T], jobs: Jobs, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    let run = || items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    match jobs.0 {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                log::warn!("thread pool with {n} threads unavailable ({e}), using the global pool");
                run()
            }
        },
        None => run(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(items: &[T], _jobs: Jobs, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Map over `0..n`.
pub fn map_range<R, F>(n: usize, jobs: Jobs, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    map_indexed(&idx, jobs, |_, &i| f(i))
}
