//! Deterministic parallel execution of independent jobs.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "DGN_WORKERS";

/// Worker count from [`WORKERS_ENV`], else the number of available cores.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Seed for point `index` of a sweep (splitmix64 of the pair).
pub fn point_seed(master: u64, index: usize) -> u64 {
    let mut z = master ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointResult<T> {
    pub index: usize,
    pub seed: u64,
    /// The job's value, or its error message.
    pub outcome: Result<T, String>,
}

/// Runs `job(point, seed)` for every point on a pool of `workers` threads.
/// Results come back in point order and do not depend on `workers`; a
/// failing or panicking point is recorded without stopping the others.
pub fn sweep_executor<P, T, F>(points: &[P], master_seed: u64, workers: usize, job: F) -> Result<Vec<PointResult<T>>>
where
    P: Sync,
    T: Send,
    F: Fn(&P, u64) -> Result<T> + Sync,
{
    if workers == 0 {
        return Err(Error::Config("workers must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(index, p)| {
                let seed = point_seed(master_seed, index);
                let outcome = match catch_unwind(AssertUnwindSafe(|| job(p, seed))) {
                    Ok(Ok(v)) => Ok(v),
                    Ok(Err(e)) => Err(e.to_string()),
                    Err(_) => Err("job panicked".to_string()),
                };
                if let Err(e) = &outcome {
                    log::warn!("point {index} failed: {e}");
                }
                PointResult { index, seed, outcome }
            })
            .collect::<Vec<_>>()
    });
    Ok(results)
}
