//! Data-parallel map abstraction. The core ships a sequential executor; the
//! `robustmv` crate provides a thread-pool one. Results are always returned
//! in index order, so reductions over them are scheduling-independent.

use alloc::vec::Vec;

pub trait Executor: Sync {
    fn map_range<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_range<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
