//! Worker pool for the block-local work items.

use std::sync::Arc;

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{invalid, Result};

/// Runs independent per-block tasks on a fixed number of threads. Results
/// are always returned in task order, so merges are identical for any
/// worker count.
#[derive(Clone)]
pub struct WorkerPool {
    workers: usize,
    pool: Option<Arc<ThreadPool>>,
}

impl std::fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerPool").field("workers", &self.workers).finish()
    }
}

impl Default for WorkerPool {
    fn default() -> Self {
        Self::serial()
    }
}

impl WorkerPool {
    pub fn serial() -> Self {
        Self { workers: 1, pool: None }
    }

    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return invalid("worker count must be at least 1");
        }
        if workers == 1 {
            return Ok(Self::serial());
        }
        let pool = ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| crate::Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
        Ok(Self { workers, pool: Some(Arc::new(pool)) })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// `(0..n).map(f)` with tasks spread over the pool.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }

    pub fn try_map<T, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }
}
