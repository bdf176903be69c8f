//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (on by default) independent work items run on
//! the rayon pool. Results always come back in index order, so callers that
//! pre-derive per-item seeds get identical output either way.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Maps `f` over `0..n`, returning results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            Exec::Parallel => par_map(n, f),
        }
    }
}

/// Runs `f` with at most `jobs` worker threads; `jobs == 1` (or a build
/// without the `parallel` feature) runs everything sequentially.
pub fn with_jobs<R, F>(jobs: usize, f: F) -> crate::Result<R>
where
    R: Send,
    F: FnOnce(Exec) -> R + Send,
{
    if jobs == 0 {
        return Err(crate::Error::Validation("--jobs must be >= 1".into()));
    }
    if jobs == 1 || cfg!(not(feature = "parallel")) {
        return Ok(f(Exec::Sequential));
    }
    install(jobs, f)
}

#[cfg(feature = "parallel")]
fn install<R, F>(jobs: usize, f: F) -> crate::Result<R>
where
    R: Send,
    F: FnOnce(Exec) -> R + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| crate::Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| f(Exec::Parallel)))
}

#[cfg(not(feature = "parallel"))]
fn install<R, F>(_jobs: usize, f: F) -> crate::Result<R>
where
    R: Send,
    F: FnOnce(Exec) -> R + Send,
{
    Ok(f(Exec::Sequential))
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i * i) as u64;
        assert_eq!(Exec::Sequential.map(1000, f), Exec::Parallel.map(1000, f));
    }
}
