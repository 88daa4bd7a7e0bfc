//! Runtime scaling study on the synthetic sphere series: naive against cached
//! operators, and sequential against per-pair parallel execution.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RomtError};
use crate::io::{gen_gaussian_spheres, SphereSynthConfig};
use crate::solver::{run_series_with_workers, ChainMode, OperatorCaching, RomtConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    Naive,
    Cached,
    CachedParallel,
}

impl BenchMode {
    pub const ALL: [BenchMode; 3] = [BenchMode::Naive, BenchMode::Cached, BenchMode::CachedParallel];

    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Naive => "naive",
            BenchMode::Cached => "cached",
            BenchMode::CachedParallel => "cached_parallel",
        }
    }

    /// `base` with the caching and chaining this mode prescribes.
    pub fn apply(self, base: &RomtConfig) -> RomtConfig {
        let (operator_caching, chain_mode) = match self {
            BenchMode::Naive => (OperatorCaching::Naive, ChainMode::Sequential),
            BenchMode::Cached => (OperatorCaching::Cached, ChainMode::Sequential),
            BenchMode::CachedParallel => (OperatorCaching::Cached, ChainMode::Parallel),
        };
        RomtConfig {
            operator_caching,
            chain_mode,
            ..base.clone()
        }
    }
}

impl FromStr for BenchMode {
    type Err = RomtError;

    fn from_str(s: &str) -> Result<Self> {
        BenchMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| RomtError::Argument(format!("unknown bench mode `{s}` (naive, cached, cached_parallel)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scale: f64,
    pub dims: [usize; 3],
    pub mode: BenchMode,
    pub wall_seconds: f64,
    pub gn_iters: usize,
    pub pcg_iters_total: usize,
    pub workers: usize,
    /// Sum of the final total costs over all pairs.
    pub final_cost: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub romt: RomtConfig,
    /// Sphere frames per series; `frames - 1` pairs are solved.
    pub frames: usize,
    /// Workers for the parallel mode.
    pub workers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            romt: RomtConfig::default(),
            frames: 5,
            workers: 4,
        }
    }
}

/// Solves the sphere series at `round(50 * factor)^3` for every factor and mode.
/// A failing run is recorded in its row and the suite moves on.
pub fn scaled_sphere_suite(factors: &[f64], modes: &[BenchMode], cfg: &BenchConfig) -> Result<BenchReport> {
    if let Some(f) = factors.iter().find(|f| !(**f > 0.0)) {
        return Err(RomtError::Argument(format!("scale factors must be positive, got {f}")));
    }
    let mut report = BenchReport::default();
    for &scale in factors {
        let synth = SphereSynthConfig {
            frames: cfg.frames,
            ..SphereSynthConfig::scaled(scale)?
        };
        let frames = gen_gaussian_spheres(&synth)?;
        for &mode in modes {
            let run_cfg = mode.apply(&cfg.romt);
            let workers = if mode == BenchMode::CachedParallel { cfg.workers.max(1) } else { 1 };
            info!("bench: {}^3, mode {}", synth.dims[0], mode.name());
            let start = Instant::now();
            let outcome = run_series_with_workers(&frames, &run_cfg, workers, None);
            let wall = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
            let row = match outcome {
                Ok(results) => BenchRow {
                    scale,
                    dims: synth.dims,
                    mode,
                    wall_seconds: wall,
                    gn_iters: results.iter().map(|r| r.gn_iterations).sum(),
                    pcg_iters_total: results.iter().map(|r| r.pcg_iterations).sum(),
                    workers,
                    final_cost: results.iter().map(|r| r.final_cost().total()).sum(),
                    error: None,
                },
                Err(e) => {
                    warn!("bench: {}^3 mode {} failed: {e}", synth.dims[0], mode.name());
                    BenchRow {
                        scale,
                        dims: synth.dims,
                        mode,
                        wall_seconds: wall,
                        gn_iters: 0,
                        pcg_iters_total: 0,
                        workers,
                        final_cost: f64::NAN,
                        error: Some(e.to_string()),
                    }
                }
            };
            report.rows.push(row);
        }
    }
    Ok(report)
}

impl BenchReport {
    pub fn row(&self, scale: f64, mode: BenchMode) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.scale == scale && r.mode == mode)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let err = |e: csv::Error| RomtError::format(path, e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record([
            "scale",
            "dims",
            "mode",
            "wall_seconds",
            "gn_iters",
            "pcg_iters_total",
            "workers",
            "final_cost",
            "error",
        ])
        .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.scale.to_string(),
                format!("{}x{}x{}", r.dims[0], r.dims[1], r.dims[2]),
                r.mode.name().to_string(),
                format!("{:.6}", r.wall_seconds),
                r.gn_iters.to_string(),
                r.pcg_iters_total.to_string(),
                r.workers.to_string(),
                format!("{:.12e}", r.final_cost),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| RomtError::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Saving {
    pub scale: f64,
    pub dims: [usize; 3],
    pub naive_seconds: f64,
    pub cached_seconds: f64,
    pub percent: f64,
}

/// `100 (1 - t_cached / t_naive)`.
pub fn saving_percent(naive_seconds: f64, cached_seconds: f64) -> f64 {
    100.0 * (1.0 - cached_seconds / naive_seconds)
}

/// Percent saving of cached over naive mode per scale. Scales missing either
/// row (or with a failed run) are skipped and named in the returned notes.
pub fn compare_modes(report: &BenchReport) -> (Vec<Saving>, Vec<String>) {
    let mut scales: Vec<f64> = Vec::new();
    for r in &report.rows {
        if !scales.contains(&r.scale) {
            scales.push(r.scale);
        }
    }
    let mut out = Vec::new();
    let mut notes = Vec::new();
    for scale in scales {
        let ok = |m| report.row(scale, m).filter(|r| r.error.is_none());
        match (ok(BenchMode::Naive), ok(BenchMode::Cached)) {
            (Some(n), Some(c)) => out.push(Saving {
                scale,
                dims: c.dims,
                naive_seconds: n.wall_seconds,
                cached_seconds: c.wall_seconds,
                percent: saving_percent(n.wall_seconds, c.wall_seconds),
            }),
            _ => notes.push(format!("scale {scale}: no successful naive/cached pair, skipped")),
        }
    }
    (out, notes)
}

pub fn format_savings(savings: &[Saving], notes: &[String]) -> String {
    let mut s = String::from("scale   dims          naive_s     cached_s    saving_%\n");
    for v in savings {
        let dims = format!("{}x{}x{}", v.dims[0], v.dims[1], v.dims[2]);
        let _ = writeln!(
            s,
            "{:<7} {:<13} {:<11.3} {:<11.3} {:.2}",
            v.scale, dims, v.naive_seconds, v.cached_seconds, v.percent
        );
    }
    for n in notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}
