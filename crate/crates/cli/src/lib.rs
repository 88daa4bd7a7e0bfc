//! `romt` command line: synthesize sphere data, solve image series, export
//! pathlines and maps, and run the scaling benchmark.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 on usage errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use romt_core::bench::{compare_modes, format_savings, scaled_sphere_suite, BenchConfig, BenchMode};
use romt_core::io::{
    export_pathlines, gen_gaussian_spheres, load_input_volume, read_series_outputs, save_volume, write_series_outputs,
    PathlineFormat, RunConfig, SphereSynthConfig,
};
use romt_core::lagrangian::{analyze_series, LagrangianConfig, LagrangianOutput};
use romt_core::solver::{run_series_with_workers, worker_count_from_env};
use romt_core::{ChainMode, RomtConfig, RomtError};

#[derive(Debug, Parser)]
#[command(name = "romt", version, about = "Regularized optimal mass transport solver", arg_required_else_help = true)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic series of drifting, spreading Gaussian spheres.
    Synth(SynthArgs),
    /// Solve every consecutive image pair listed in a run config.
    Solve(SolveArgs),
    /// Trace pathlines through a solved series and export them.
    Pathlines(PathlineArgs),
    /// Rasterized speed and Péclet maps plus flux vectors of a solved series.
    Maps(MapArgs),
    /// Runtime scaling study on sphere series.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with sphere parameters; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scale the default 50^3 geometry by this factor.
    #[arg(long, conflicts_with = "config")]
    scale: Option<f64>,
    #[arg(long, value_delimiter = ',', num_args = 3)]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, value_delimiter = ',', num_args = 3, allow_negative_numbers = true)]
    center: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', num_args = 3, allow_negative_numbers = true)]
    drift: Option<Vec<f64>>,
    #[arg(long)]
    std: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    growth: Option<f64>,
    #[arg(long)]
    amplitude: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Sequential,
    Parallel,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Run config (JSON): solver parameters, `inputs`, `output_dir`.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's chaining mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Worker threads for parallel mode (default: config, then ROMT_THREADS).
    #[arg(long)]
    workers: Option<usize>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LagrangianArgs {
    /// Directory written by `solve`.
    #[arg(long)]
    run: PathBuf,
    /// Seed voxels at or above this fraction of the first image's maximum.
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
    /// Keep every n-th seed voxel per axis.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Euler substeps per time interval.
    #[arg(long, default_value_t = 1)]
    n_sub: usize,
    /// Drop pathlines and flux vectors shorter than this many voxels.
    #[arg(long, default_value_t = 0.5)]
    prune: f64,
    /// Binary mask volume restricting the seeds.
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Vtk,
}

#[derive(Debug, Args)]
struct PathlineArgs {
    #[command(flatten)]
    common: LagrangianArgs,
    /// Output file (default: <run>/pathlines.<ext>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Export pathlines shorter than the prune threshold as well.
    #[arg(long)]
    keep_short: bool,
}

#[derive(Debug, Args)]
struct MapArgs {
    #[command(flatten)]
    common: LagrangianArgs,
    /// Output directory (default: <run>/maps).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Grid scale factors relative to 50^3.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.75,1,1.25,1.5,1.75")]
    factors: Vec<f64>,
    /// Modes: naive, cached, cached_parallel.
    #[arg(long, value_delimiter = ',', default_value = "naive,cached,cached_parallel")]
    modes: Vec<String>,
    /// Workers for cached_parallel (default: ROMT_THREADS or all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Sphere frames per series.
    #[arg(long, default_value_t = 5)]
    frames: usize,
    /// Solver config JSON (RomtConfig fields); defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV report path.
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();

    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Solve(a) => solve(a),
        Command::Pathlines(a) => pathlines(a),
        Command::Maps(a) => maps(a),
        Command::Bench(a) => bench(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("romt: error: {e}");
            1
        }
    }
}

type CliResult = Result<(), RomtError>;

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| RomtError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn triple<T: Copy>(v: Option<Vec<T>>) -> Option<[T; 3]> {
    v.map(|v| [v[0], v[1], v[2]])
}

fn synth(a: SynthArgs) -> CliResult {
    let mut cfg = match (&a.config, a.scale) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| RomtError::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json_from_str::<SphereSynthConfig>(&text, path)?
        }
        (None, Some(f)) => SphereSynthConfig::scaled(f)?,
        (None, None) => SphereSynthConfig::default(),
    };
    if let Some(d) = triple(a.dims) {
        cfg.dims = d;
    }
    if let Some(p) = a.frames {
        cfg.frames = p;
    }
    if let Some(c) = triple(a.center) {
        cfg.center = c;
    }
    if let Some(d) = triple(a.drift) {
        cfg.drift = d;
    }
    if let Some(s) = a.std {
        cfg.std = s;
    }
    if let Some(g) = a.growth {
        cfg.growth = g;
    }
    if let Some(amp) = a.amplitude {
        cfg.amplitude = amp;
    }
    let frames = gen_gaussian_spheres(&cfg)?;
    create_dir(&a.out)?;
    for (t, f) in frames.iter().enumerate() {
        save_volume(f, a.out.join(format!("frame_{t:03}.raw")))?;
    }
    println!("wrote {} frames of {:?} to {}", frames.len(), cfg.dims, a.out.display());
    Ok(())
}

fn serde_json_from_str<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T, RomtError> {
    serde_json::from_str(text).map_err(|e| RomtError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn solve(a: SolveArgs) -> CliResult {
    let mut run = RunConfig::load(&a.config)?;
    if let Some(mode) = a.mode {
        run.romt.chain_mode = match mode {
            ModeArg::Sequential => ChainMode::Sequential,
            ModeArg::Parallel => ChainMode::Parallel,
        };
    }
    if let Some(out) = a.out {
        run.output_dir = out;
    }
    let workers = a.workers.or(run.workers).unwrap_or_else(worker_count_from_env);
    let volumes = run
        .inputs
        .iter()
        .map(|p| {
            let v = load_input_volume(p)?;
            v.check_density().map_err(|e| RomtError::Format {
                path: p.clone(),
                msg: e.to_string(),
            })?;
            Ok(v)
        })
        .collect::<Result<Vec<_>, RomtError>>()?;
    let mask = run.mask.as_ref().map(load_input_volume).transpose()?;

    info!("solving {} pairs ({:?})", volumes.len() - 1, run.romt.chain_mode);
    let results = run_series_with_workers(&volumes, &run.romt, workers, mask.as_ref())?;
    write_series_outputs(&run.output_dir, &results, &run.romt, &run.inputs)?;
    for (p, r) in results.iter().enumerate() {
        let c = r.final_cost();
        println!(
            "pair {p}: {} GN iterations ({:?}), energy {:.6e}, fit {:.6e}",
            r.gn_iterations, r.stop_reason, c.energy, c.fit
        );
    }
    println!("outputs in {}", run.output_dir.display());
    Ok(())
}

fn analyze(a: &LagrangianArgs) -> Result<(LagrangianOutput, LagrangianConfig), RomtError> {
    let (summary, results) = read_series_outputs(&a.run)?;
    let cfg = LagrangianConfig {
        threshold_fraction: a.threshold,
        stride: a.stride,
        n_sub: a.n_sub,
        prune_threshold: a.prune,
        ..LagrangianConfig::default()
    };
    let mask = a.mask.as_ref().map(load_input_volume).transpose()?;
    let RomtConfig { sigma, k_t, .. } = summary.config;
    Ok((analyze_series(&results, sigma, k_t, &cfg, mask.as_ref())?, cfg))
}

fn pathlines(a: PathlineArgs) -> CliResult {
    let (out, cfg) = analyze(&a.common)?;
    let format = match a.format {
        FormatArg::Csv => PathlineFormat::Csv,
        FormatArg::Vtk => PathlineFormat::VtkAscii,
    };
    let path = a
        .out
        .unwrap_or_else(|| a.common.run.join(format!("pathlines.{}", format.extension())));
    let lines: Vec<_> = if a.keep_short {
        out.pathlines.clone()
    } else {
        out.displayed(cfg.prune_threshold).cloned().collect()
    };
    export_pathlines(&lines, &path, format)?;
    println!("wrote {} of {} pathlines to {}", lines.len(), out.pathlines.len(), path.display());
    Ok(())
}

fn maps(a: MapArgs) -> CliResult {
    let (out, _) = analyze(&a.common)?;
    let dir = a.out.unwrap_or_else(|| a.common.run.join("maps"));
    create_dir(&dir)?;
    save_volume(&out.glyphs.speed_map, dir.join("speed_map.raw"))?;
    save_volume(&out.glyphs.pe_map, dir.join("pe_map.raw"))?;
    let flux = dir.join("flux_vectors.csv");
    let err = |e: csv::Error| RomtError::Format {
        path: flux.clone(),
        msg: e.to_string(),
    };
    let mut w = csv::Writer::from_path(&flux).map_err(err)?;
    w.write_record(["start_x", "start_y", "start_z", "end_x", "end_y", "end_z", "length"])
        .map_err(err)?;
    for f in &out.glyphs.flux_vectors {
        let row = [f.start[0], f.start[1], f.start[2], f.end[0], f.end[1], f.end[2], f.length];
        w.write_record(row.iter().map(|x| format!("{x:.8e}"))).map_err(err)?;
    }
    w.flush().map_err(|e| RomtError::Io {
        path: flux.clone(),
        source: e,
    })?;
    println!(
        "wrote speed and Péclet maps and {} flux vectors to {}",
        out.glyphs.flux_vectors.len(),
        dir.display()
    );
    Ok(())
}

fn bench(a: BenchArgs) -> CliResult {
    let modes = a
        .modes
        .iter()
        .map(|m| m.trim().parse::<BenchMode>())
        .collect::<Result<Vec<_>, _>>()?;
    let romt = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| RomtError::Io {
                path: path.clone(),
                source: e,
            })?;
            let cfg: RomtConfig = serde_json_from_str(&text, path)?;
            cfg.validate()?;
            cfg
        }
        None => RomtConfig::default(),
    };
    let cfg = BenchConfig {
        romt,
        frames: a.frames,
        workers: a.workers.unwrap_or_else(worker_count_from_env),
    };
    let report = scaled_sphere_suite(&a.factors, &modes, &cfg)?;
    report.write_csv(&a.out)?;
    for r in &report.rows {
        println!(
            "{:>5} {:>3}^3 {:<16} {:>10.3}s  gn {:>3}  pcg {:>5}  workers {}{}",
            r.scale,
            r.dims[0],
            r.mode.name(),
            r.wall_seconds,
            r.gn_iters,
            r.pcg_iters_total,
            r.workers,
            r.error.as_deref().map(|e| format!("  error: {e}")).unwrap_or_default()
        );
    }
    let (savings, notes) = compare_modes(&report);
    print!("{}", format_savings(&savings, &notes));
    println!("report written to {}", a.out.display());
    Ok(())
}
