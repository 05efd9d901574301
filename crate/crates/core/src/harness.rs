//! Fixed worker pool over a replica-index queue.
//!
//! Workers pull indices from a shared counter; results carry their index and
//! are returned in index order, so output never depends on the worker count.

use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;

/// Worker count to use when the caller does not specify one.
pub fn default_workers() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

/// Evaluates `job(i)` for `i in 0..count` on `workers` threads.
pub fn run_indexed<T, F>(count: u64, workers: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    run_indexed_with(count, workers, || (), |_, i| job(i))
}

/// Like [`run_indexed`], with per-worker scratch state built by `init`
/// (e.g. an environment reused across replicas).
pub fn run_indexed_with<S, T, I, F>(count: u64, workers: usize, init: I, job: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync,
    F: Fn(&mut S, u64) -> T + Sync,
{
    let workers = workers.max(1).min(count.max(1) as usize);
    if workers == 1 {
        let mut state = init();
        return (0..count).map(|i| job(&mut state, i)).collect();
    }
    let next = AtomicU64::new(0);
    let mut tagged: Vec<(u64, T)> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut state = init();
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= count {
                            break;
                        }
                        out.push((i, job(&mut state, i)));
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    tagged.sort_unstable_by_key(|(i, _)| *i);
    tagged.into_iter().map(|(_, t)| t).collect()
}
