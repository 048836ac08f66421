//! Worker-pool configuration.
//!
//! Work is always split into fixed-size chunks whose results are combined in
//! chunk order, so the thread count affects speed but never results.

use crate::error::{Error, Result};

/// Environment variable holding the worker count.
pub const THREADS_ENV: &str = "VOXELSTYLE_THREADS";

/// Parses a worker count; `0` is rejected.
pub fn parse_threads(value: &str) -> Result<usize> {
    match value.trim().parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(Error::InvalidArgument(format!(
            "{THREADS_ENV} must be a positive integer, got '{value}'"
        ))),
    }
}

/// Worker count requested through the environment, if any.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => parse_threads(&v).map(Some),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::InvalidArgument(format!("{THREADS_ENV}: {e}"))),
    }
}

/// Builds a pool with `threads` workers, or rayon's default when `None`.
pub fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// Runs `f` inside a pool sized by the environment.
pub fn install<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(build_pool(threads_from_env()?)?.install(f))
}
