use std::sync::Arc;

use log::info;
use rayon::prelude::*;

use crate::error::{Result, RomtError};
use crate::grid::Volume;
use crate::transport::DiffusionContext;

use super::{gauss_newton_with, ChainMode, PairResult, RomtConfig};

/// Environment variable capping the worker count of parallel series runs.
pub const THREADS_ENV: &str = "ROMT_THREADS";

/// Worker count from `ROMT_THREADS`, falling back to the available parallelism.
pub fn worker_count_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Solves every consecutive pair of `volumes` according to `cfg.chain_mode`.
pub fn run_series(volumes: &[Volume], cfg: &RomtConfig) -> Result<Vec<PairResult>> {
    run_series_with_workers(volumes, cfg, worker_count_from_env(), None)
}

pub fn run_series_with_workers(
    volumes: &[Volume],
    cfg: &RomtConfig,
    workers: usize,
    fit_mask: Option<&Volume>,
) -> Result<Vec<PairResult>> {
    cfg.validate()?;
    if volumes.len() < 2 {
        return Err(RomtError::Argument(format!(
            "a series needs at least 2 images, got {}",
            volumes.len()
        )));
    }
    let grid = *volumes[0].grid();
    if volumes.iter().any(|v| !v.grid().same_shape(&grid)) {
        return Err(RomtError::Argument("series images live on different grids".into()));
    }
    let diffusion = Arc::new(DiffusionContext::new(grid, cfg.sigma, cfg.k_t)?);

    match cfg.chain_mode {
        ChainMode::Sequential => {
            let mut results: Vec<PairResult> = Vec::with_capacity(volumes.len() - 1);
            for (i, target) in volumes.iter().enumerate().skip(1) {
                let start = results.last().map_or(&volumes[0], |r| r.final_image());
                info!("pair {}/{}: sequential", i, volumes.len() - 1);
                let res = gauss_newton_with(start, target, cfg, diffusion.clone(), fit_mask)?;
                results.push(res);
            }
            Ok(results)
        }
        ChainMode::Parallel => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers.max(1))
                .build()
                .map_err(|e| RomtError::Argument(format!("cannot start worker pool: {e}")))?;
            info!("solving {} pairs on {} workers", volumes.len() - 1, workers.max(1));
            pool.install(|| {
                volumes
                    .par_windows(2)
                    .map(|pair| gauss_newton_with(&pair[0], &pair[1], cfg, diffusion.clone(), fit_mask))
                    .collect()
            })
        }
    }
}
