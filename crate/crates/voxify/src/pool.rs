//! Scoped worker threads for ray chunks.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use voxify_core::train::RayExecutor;

pub const THREADS_ENV: &str = "VOXIFY_THREADS";

/// Runs jobs on up to `threads` scoped threads. Results come back in job
/// order, so reductions over them do not depend on the thread count.
#[derive(Debug, Clone, Copy)]
pub struct Threaded {
    threads: usize,
}

impl Threaded {
    pub fn new(threads: usize) -> Self {
        Threaded { threads: threads.max(1) }
    }

    /// Available parallelism, capped by `VOXIFY_THREADS` when set.
    pub fn from_env() -> Self {
        let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
        let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0);
        Threaded::new(cap.map_or(avail, |c| c.min(avail)))
    }

    pub fn threads(&self) -> usize {
        self.threads
    }
}

impl RayExecutor for Threaded {
    fn map<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        let workers = self.threads.min(n);
        if workers <= 1 {
            return (0..n).map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let v = f(i);
                    *slots[i].lock().expect("unpoisoned") = Some(v);
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().expect("unpoisoned").expect("every job ran")).collect()
    }
}
