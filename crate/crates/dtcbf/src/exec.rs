use dtcbf_core::verifier::Executor;
use rayon::prelude::*;

/// Runs verifier batches on a dedicated rayon pool.
pub struct Parallel {
    pool: rayon::ThreadPool,
    batch: usize,
}

impl Parallel {
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()?;
        // enough boxes per batch to keep every worker busy
        Ok(Self {
            pool,
            batch: 4 * threads.max(1),
        })
    }
}

impl Executor for Parallel {
    fn batch_size(&self) -> usize {
        self.batch
    }

    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T> {
        let f = &f;
        self.pool
            .install(|| (0..n).into_par_iter().map(f).collect())
    }
}
