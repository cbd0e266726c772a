use anyhow::{bail, Context};

pub const WORKERS_ENV: &str = "BRWRE_WORKERS";

/// Worker count: `BRWRE_WORKERS` if set, else the flag, else the available parallelism.
pub fn resolve_workers(flag: Option<usize>) -> anyhow::Result<usize> {
    let n = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{WORKERS_ENV}={v:?} is not a worker count"))?,
        Err(_) => match flag {
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        bail!("worker count must be at least 1");
    }
    Ok(n)
}

pub fn pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}
