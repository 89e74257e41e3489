//! Ordered map over record batches, parallel with the `parallel` feature
//! and sequential otherwise.
//!
//! Every helper returns results in input order regardless of which worker
//! finished first, so batch outputs are byte-identical across modes.

/// How a batch is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if parallel_available() {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

pub fn map_ordered<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Like [`map_ordered`] but with at most `max_in_flight` calls running at
/// once. Used for network-bound work.
pub fn map_bounded<T, U, F>(exec: Execution, max_in_flight: usize, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    if max_in_flight <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new()
                .num_threads(max_in_flight)
                .build()
            {
                Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                Err(err) => {
                    log::warn!("could not build worker pool ({err}), running sequentially");
                    items.iter().map(f).collect()
                }
            }
        }
        _ => items.iter().map(f).collect(),
    }
}
