//! A fixed-size worker pool whose results come back in job order, so
//! nothing downstream can observe how jobs were scheduled.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};

pub struct WorkerPool {
    pool: rayon::ThreadPool,
    workers: usize,
}

/// Where and how long one job ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobTiming {
    pub worker: usize,
    pub elapsed: Duration,
}

impl WorkerPool {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidParameter("worker count must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("neurotopo-worker-{i}"))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("cannot start {workers} workers: {e}")))?;
        Ok(Self { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// `f(0), ..., f(n - 1)` evaluated on the pool, in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(&f).collect())
    }

    /// Like [`map`](Self::map), returning the lowest-index error if any job
    /// fails.
    pub fn try_map<T, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }

    /// Like [`map`](Self::map), also recording which worker ran each job.
    pub fn map_timed<T, F>(&self, n: usize, f: F) -> Vec<(T, JobTiming)>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.map(n, |i| {
            let start = Instant::now();
            let out = f(i);
            let timing = JobTiming {
                worker: rayon::current_thread_index().unwrap_or(0),
                elapsed: start.elapsed(),
            };
            (out, timing)
        })
    }
}
