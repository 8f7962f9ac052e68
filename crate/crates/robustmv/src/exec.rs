use rayon::prelude::*;
use rayon::ThreadPool;
use robustmv_core::exec::Executor;

use crate::error::{CliError, Result};

/// Executor backed by a dedicated rayon pool. Work items carry their own RNG
/// streams, so output does not depend on the thread count.
pub struct Rayon {
    pool: ThreadPool,
}

impl Rayon {
    /// `threads = 0` uses the available parallelism.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))?;
        Ok(Rayon { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Rayon {
    fn map_range<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool
            .install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_index_order() {
        let ex = Rayon::new(4).unwrap();
        let v = ex.map_range(1000, |i| i * 3);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 3 * i));
        assert_eq!(ex.threads(), 4);
    }
}
