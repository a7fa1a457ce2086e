//! Job fan-out for sweeps. Each job owns its RNG stream, so results do not
//! depend on the execution path or on scheduling.

/// How to run a batch of independent jobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon with `workers` threads (`None`: the global pool). Falls back
    /// to sequential when the `parallel` feature is off.
    #[default]
    Parallel,
    ParallelWith(usize),
}

impl Execution {
    pub fn from_workers(workers: Option<usize>) -> Self {
        match workers {
            Some(1) => Execution::Sequential,
            Some(n) => Execution::ParallelWith(n),
            None => Execution::Parallel,
        }
    }
}

pub fn map_sequential<T, R>(jobs: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    jobs.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_parallel<T: Sync, R: Send>(jobs: &[T], workers: Option<usize>, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    match workers {
        None => jobs.par_iter().map(f).collect(),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| jobs.par_iter().map(&f).collect()),
            Err(_) => jobs.par_iter().map(f).collect(),
        },
    }
}

/// Maps `f` over `jobs`, preserving order.
pub fn map_jobs<T: Sync, R: Send>(jobs: &[T], exec: Execution, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    match exec {
        Execution::Sequential => map_sequential(jobs, f),
        #[cfg(feature = "parallel")]
        Execution::Parallel => map_parallel(jobs, None, f),
        #[cfg(feature = "parallel")]
        Execution::ParallelWith(n) => map_parallel(jobs, Some(n), f),
        #[cfg(not(feature = "parallel"))]
        _ => map_sequential(jobs, f),
    }
}
