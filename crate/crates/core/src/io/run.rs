//! Run configuration files and the on-disk layout of solved series.
//!
//! ```text
//! out/
//!   run.json              config and per-pair summary
//!   cost_history.csv      pair, iter, energy, fit, total
//!   pair_000/velocity.raw (+ .json)   3m frames
//!   pair_000/interp.raw   (+ .json)   m frames, rho_1 .. rho_m
//!   pair_000/rho0.raw     (+ .json)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::export::fmt_value;
use super::nifti::import_nifti;
use super::volume_file::{
    load_velocity_stack, load_volume, load_volume_stack, save_velocity_stack, save_volume, save_volume_stack,
};
use crate::error::{Result, RomtError};
use crate::grid::Volume;
use crate::solver::{CostTerms, PairResult, RomtConfig, StopReason};

/// Keys of a run file that are not solver parameters.
const RUN_KEYS: [&str; 4] = ["inputs", "output_dir", "mask", "workers"];

/// Solver parameters plus the files to run on. Serialized as one flat object:
/// every [`RomtConfig`] field by name (`mode` is accepted for `chain_mode`),
/// plus `inputs`, `output_dir`, and optional `mask` and `workers`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub romt: RomtConfig,
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub mask: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunKeys {
    inputs: Vec<PathBuf>,
    output_dir: PathBuf,
    #[serde(default)]
    mask: Option<PathBuf>,
    #[serde(default)]
    workers: Option<usize>,
}

impl RunConfig {
    /// Parses a run file; relative paths resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> std::result::Result<Self, String> {
        let value: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let Value::Object(mut all) = value else {
            return Err("run config must be a JSON object".into());
        };
        let mut run = Map::new();
        for key in RUN_KEYS {
            if let Some(v) = all.remove(key) {
                run.insert(key.into(), v);
            }
        }
        let keys: RunKeys = serde_json::from_value(Value::Object(run)).map_err(|e| e.to_string())?;
        let romt: RomtConfig = serde_json::from_value(Value::Object(all)).map_err(|e| e.to_string())?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
        Ok(Self {
            romt,
            inputs: keys.inputs.into_iter().map(resolve).collect(),
            output_dir: resolve(keys.output_dir),
            mask: keys.mask.map(resolve),
            workers: keys.workers,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| RomtError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::from_json(&text, base).map_err(|msg| RomtError::format(path, msg))?;
        cfg.romt.validate()?;
        if cfg.inputs.len() < 2 {
            return Err(RomtError::format(path, format!("need at least 2 inputs, got {}", cfg.inputs.len())));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Value {
        let mut obj = match serde_json::to_value(&self.romt).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("RomtConfig is a struct"),
        };
        let path_str = |p: &PathBuf| Value::String(p.to_string_lossy().into_owned());
        obj.insert("inputs".into(), Value::Array(self.inputs.iter().map(path_str).collect()));
        obj.insert("output_dir".into(), path_str(&self.output_dir));
        if let Some(m) = &self.mask {
            obj.insert("mask".into(), path_str(m));
        }
        if let Some(w) = self.workers {
            obj.insert("workers".into(), w.into());
        }
        Value::Object(obj)
    }
}

/// Loads an input image: NIfTI-1 for `.nii`, raw + sidecar otherwise.
pub fn load_input_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("nii")) {
        import_nifti(path)
    } else {
        load_volume(path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub pair: usize,
    pub dir: String,
    pub stop_reason: StopReason,
    pub gn_iterations: usize,
    pub pcg_iterations: usize,
    pub final_energy: f64,
    pub final_fit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RomtConfig,
    pub inputs: Vec<String>,
    pub pairs: Vec<PairSummary>,
}

pub fn pair_dir_name(pair: usize) -> String {
    format!("pair_{pair:03}")
}

/// Writes every pair's velocity stack, interpolations and starting image, the
/// cost history and `run.json` under `dir`.
pub fn write_series_outputs(dir: impl AsRef<Path>, results: &[PairResult], cfg: &RomtConfig, inputs: &[PathBuf]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| RomtError::io(dir, e))?;
    let mut pairs = Vec::with_capacity(results.len());
    let history = dir.join("cost_history.csv");
    let mut w = csv::Writer::from_path(&history).map_err(|e| csv_err(&history, e))?;
    w.write_record(["pair", "iter", "energy", "fit", "total"]).map_err(|e| csv_err(&history, e))?;

    for (p, res) in results.iter().enumerate() {
        let name = pair_dir_name(p);
        let pdir = dir.join(&name);
        fs::create_dir_all(&pdir).map_err(|e| RomtError::io(&pdir, e))?;
        save_velocity_stack(&res.v_final, pdir.join("velocity.raw"))?;
        save_volume_stack(&res.rho_interp, pdir.join("interp.raw"))?;
        save_volume(&res.rho0, pdir.join("rho0.raw"))?;
        for (it, c) in res.cost_history.iter().enumerate() {
            w.write_record([p.to_string(), it.to_string(), fmt_value(c.energy), fmt_value(c.fit), fmt_value(c.total())])
                .map_err(|e| csv_err(&history, e))?;
        }
        let last = res.final_cost();
        pairs.push(PairSummary {
            pair: p,
            dir: name,
            stop_reason: res.stop_reason,
            gn_iterations: res.gn_iterations,
            pcg_iterations: res.pcg_iterations,
            final_energy: last.energy,
            final_fit: last.fit,
        });
    }
    w.flush().map_err(|e| RomtError::io(&history, e))?;

    let summary = RunSummary {
        config: cfg.clone(),
        inputs: inputs.iter().map(|p| p.to_string_lossy().into_owned()).collect(),
        pairs,
    };
    let run = dir.join("run.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&run, text + "\n").map_err(|e| RomtError::io(&run, e))
}

/// Cost history rows as `(pair, iter, terms)`.
pub fn read_cost_history(path: impl AsRef<Path>) -> Result<Vec<(usize, usize, CostTerms)>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let field = |i: usize| rec.get(i).ok_or_else(|| RomtError::format(path, format!("row has no column {i}")));
        let int = |i: usize| -> Result<usize> {
            field(i)?.parse().map_err(|e| RomtError::format(path, format!("column {i}: {e}")))
        };
        let float = |i: usize| -> Result<f64> {
            field(i)?.parse().map_err(|e| RomtError::format(path, format!("column {i}: {e}")))
        };
        rows.push((int(0)?, int(1)?, CostTerms { energy: float(2)?, fit: float(3)? }));
    }
    Ok(rows)
}

/// Reads back a solved series written by [`write_series_outputs`]. Field data
/// comes back at file (`f32`) precision.
pub fn read_series_outputs(dir: impl AsRef<Path>) -> Result<(RunSummary, Vec<PairResult>)> {
    let dir = dir.as_ref();
    let run = dir.join("run.json");
    let text = fs::read_to_string(&run).map_err(|e| RomtError::io(&run, e))?;
    let summary: RunSummary = serde_json::from_str(&text).map_err(|e| RomtError::format(&run, e.to_string()))?;
    let history = read_cost_history(dir.join("cost_history.csv"))?;

    let mut results = Vec::with_capacity(summary.pairs.len());
    for pair in &summary.pairs {
        let pdir = dir.join(&pair.dir);
        let v_final = load_velocity_stack(pdir.join("velocity.raw"))?;
        let rho_interp = load_volume_stack(pdir.join("interp.raw"))?;
        let rho0 = load_volume(pdir.join("rho0.raw"))?;
        if rho_interp.len() != v_final.intervals() {
            return Err(RomtError::format(
                &pdir,
                format!("{} interpolations for {} intervals", rho_interp.len(), v_final.intervals()),
            ));
        }
        let cost_history = history.iter().filter(|r| r.0 == pair.pair).map(|r| r.2).collect();
        results.push(PairResult {
            v_final,
            rho0,
            rho_interp,
            cost_history,
            stop_reason: pair.stop_reason,
            gn_iterations: pair.gn_iterations,
            pcg_iterations: pair.pcg_iterations,
        });
    }
    Ok((summary, results))
}

fn csv_err(path: &Path, e: csv::Error) -> RomtError {
    RomtError::format(path, e.to_string())
}
