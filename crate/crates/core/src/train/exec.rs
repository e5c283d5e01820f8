use alloc::vec::Vec;

/// Rays are processed in fixed chunks of this many; results are combined in
/// chunk order so sums do not depend on how chunks were scheduled.
pub const CHUNK: usize = 256;

/// Runs independent jobs `0..n` and returns their results in index order.
pub trait RayExecutor: Sync {
    fn map<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T>;
}

/// Runs every job on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl RayExecutor for Sequential {
    fn map<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        (0..n).map(f).collect()
    }
}

/// Number of chunks covering `len` items.
pub fn chunk_count(len: usize) -> usize {
    len.div_ceil(CHUNK)
}

pub fn chunk_range(i: usize, len: usize) -> core::ops::Range<usize> {
    i * CHUNK..((i + 1) * CHUNK).min(len)
}
