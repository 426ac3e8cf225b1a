//! Worker pools for per-utterance work.

use rayon::{ThreadPool, ThreadPoolBuilder};

pub const THREADS_VAR: &str = "ASSERTKIT_THREADS";

/// Worker count: `ASSERTKIT_THREADS` when set to a positive integer,
/// otherwise the number of available cores.
pub fn thread_count() -> usize {
    std::env::var(THREADS_VAR)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn worker_pool() -> ThreadPool {
    ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .expect("thread pool")
}
