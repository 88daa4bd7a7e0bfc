//! Lagrangian post-processing of solved flows: pathlines traced through the
//! augmented velocity, speed and Péclet samples along them, flux vectors and
//! rasterized maps.
//!
//! Positions are voxel coordinates (cell centers at integer points); velocities
//! are physical, so one interval moves a particle by `k_t * v / h` voxels.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RomtError};
use crate::grid::{gradient_field, Grid, VectorField, Volume};
use crate::solver::PairResult;

/// Relative floor applied to densities before taking logarithms.
pub const DEFAULT_FLOOR_FRACTION: f64 = 1e-8;
/// Absolute epsilon added to the Péclet denominator.
pub const DEFAULT_PECLET_EPS: f64 = 1e-12;
/// Flux vectors and pathlines shorter than this (in voxels) are pruned.
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pathline {
    pub seed: [f64; 3],
    /// Starts at `seed`, then one point per Euler substep.
    pub points: Vec<[f64; 3]>,
    pub speeds: Vec<f64>,
    pub peclets: Vec<f64>,
}

impl Pathline {
    fn at_seed(seed: [f64; 3]) -> Self {
        Self {
            seed,
            points: vec![seed],
            speeds: Vec::new(),
            peclets: Vec::new(),
        }
    }

    pub fn start(&self) -> [f64; 3] {
        self.points[0]
    }

    pub fn end(&self) -> [f64; 3] {
        *self.points.last().expect("pathline holds its seed")
    }

    /// Straight-line distance from first to last point, in voxels.
    pub fn displacement(&self) -> f64 {
        distance(self.start(), self.end())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxVector {
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub length: f64,
}

#[derive(Clone, Debug)]
pub struct GlyphSet {
    pub speed_map: Volume,
    pub pe_map: Volume,
    pub flux_vectors: Vec<FluxVector>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapKind {
    Speed,
    Peclet,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceConfig {
    pub k_t: f64,
    /// Euler substeps per interval.
    pub n_sub: usize,
}

impl TraceConfig {
    /// Interval whose velocity applies at recorded point `p`. The seed shares
    /// the first interval with the first substep.
    pub fn interval_of_point(&self, p: usize) -> usize {
        p.saturating_sub(1) / self.n_sub
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LagrangianConfig {
    pub threshold_fraction: f64,
    pub stride: usize,
    pub n_sub: usize,
    pub prune_threshold: f64,
    pub floor_fraction: f64,
    pub peclet_eps: f64,
}

impl Default for LagrangianConfig {
    fn default() -> Self {
        Self {
            threshold_fraction: 0.1,
            stride: 1,
            n_sub: 1,
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
            floor_fraction: DEFAULT_FLOOR_FRACTION,
            peclet_eps: DEFAULT_PECLET_EPS,
        }
    }
}

/// `v - sigma * grad log(max(rho, floor))`.
pub fn augmented_velocity(v: &VectorField, rho: &Volume, sigma: f64, floor: f64) -> Result<VectorField> {
    if !(floor > 0.0) {
        return Err(RomtError::Argument(format!("density floor must be positive, got {floor}")));
    }
    if sigma < 0.0 {
        return Err(RomtError::Parameter(format!("sigma must be nonnegative, got {sigma}")));
    }
    if !v.grid().same_shape(rho.grid()) {
        return Err(RomtError::Argument("velocity and density grids differ".into()));
    }
    let mut out = v.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let grad = log_gradient(rho, floor);
    for (o, g) in out.data_mut().iter_mut().zip(grad.data()) {
        *o -= sigma * g;
    }
    Ok(out)
}

fn log_gradient(rho: &Volume, floor: f64) -> VectorField {
    let logs = rho.data().iter().map(|r| r.max(floor).ln()).collect();
    let logs = Volume::new(*rho.grid(), logs).expect("same grid");
    gradient_field(&logs)
}

/// Cell centers of voxels with `rho0 >= threshold_fraction * max(rho0)`,
/// inside `mask` (nonzero entries) when given, keeping every `stride`-th voxel
/// per axis. Ordered by linear index.
pub fn seed_points(rho0: &Volume, threshold_fraction: f64, stride: usize, mask: Option<&Volume>) -> Result<Vec<[f64; 3]>> {
    if !(0.0..=1.0).contains(&threshold_fraction) {
        return Err(RomtError::Argument(format!(
            "threshold fraction must lie in [0, 1], got {threshold_fraction}"
        )));
    }
    if stride == 0 {
        return Err(RomtError::Argument("seed stride must be at least 1".into()));
    }
    let grid = rho0.grid();
    if let Some(m) = mask {
        if !m.grid().same_shape(grid) {
            return Err(RomtError::Argument("mask grid differs from density grid".into()));
        }
    }
    let cut = threshold_fraction * rho0.max();
    let seeds: Vec<[f64; 3]> = rho0
        .data()
        .iter()
        .enumerate()
        .filter(|&(idx, &r)| {
            let c = grid.coords(idx);
            r >= cut
                && c.iter().all(|x| x % stride == 0)
                && mask.is_none_or(|m| m.data()[idx] != 0.0)
        })
        .map(|(idx, _)| grid.coords(idx).map(|c| c as f64))
        .collect();
    if seeds.is_empty() {
        warn!("no seed voxels at threshold {threshold_fraction}, stride {stride}");
    }
    Ok(seeds)
}

/// Explicit Euler through a piecewise-constant-in-time velocity series.
/// A pathline meeting a non-finite velocity sample stops where it is.
pub fn trace_pathlines(seeds: &[[f64; 3]], series: &[VectorField], cfg: &TraceConfig) -> Result<Vec<Pathline>> {
    if cfg.n_sub == 0 {
        return Err(RomtError::Argument("n_sub must be at least 1".into()));
    }
    if !(cfg.k_t > 0.0) {
        return Err(RomtError::Parameter(format!("k_t must be positive, got {}", cfg.k_t)));
    }
    let Some(first) = series.first() else {
        return Ok(seeds.iter().map(|&s| Pathline::at_seed(s)).collect());
    };
    let grid = *first.grid();
    if series.iter().any(|f| !f.grid().same_shape(&grid)) {
        return Err(RomtError::Argument("velocity series mixes grids".into()));
    }
    let hull = hull(&grid);
    let scale = cfg.k_t / (cfg.n_sub as f64 * grid.spacing());

    seeds
        .par_iter()
        .map(|&seed| {
            let mut line = Pathline::at_seed(clamp(seed, hull));
            'intervals: for (interval, field) in series.iter().enumerate() {
                for _ in 0..cfg.n_sub {
                    let p = line.end();
                    let u = field.sample(p)?;
                    if u.iter().any(|x| !x.is_finite()) {
                        warn!("pathline from {seed:?} stopped: non-finite velocity at {p:?} in interval {interval}");
                        break 'intervals;
                    }
                    let next = [p[0] + scale * u[0], p[1] + scale * u[1], p[2] + scale * u[2]];
                    line.points.push(clamp(next, hull));
                }
            }
            Ok(line)
        })
        .collect()
}

/// Samples speed `|v|` and `Pe = |v| / (sigma |grad log rho| + eps)` at every
/// recorded point, using the interval that moved the particle there. With
/// `sigma == 0` every Péclet sample is `+inf`.
pub fn attach_speed_peclet(
    pathlines: &mut [Pathline],
    v_series: &[VectorField],
    rho_series: &[&Volume],
    sigma: f64,
    floor: f64,
    eps: f64,
    cfg: &TraceConfig,
) -> Result<()> {
    if v_series.len() != rho_series.len() {
        return Err(RomtError::Argument(format!(
            "{} velocity fields but {} densities",
            v_series.len(),
            rho_series.len()
        )));
    }
    if !(floor > 0.0) {
        return Err(RomtError::Argument(format!("density floor must be positive, got {floor}")));
    }
    if v_series.is_empty() {
        for line in pathlines.iter_mut() {
            line.speeds = vec![0.0; line.points.len()];
            line.peclets = vec![0.0; line.points.len()];
        }
        return Ok(());
    }
    let grads: Vec<VectorField> = if sigma > 0.0 {
        rho_series.iter().map(|r| log_gradient(r, floor)).collect()
    } else {
        Vec::new()
    };
    let last = v_series.len() - 1;

    pathlines.par_iter_mut().try_for_each(|line| -> Result<()> {
        let mut speeds = Vec::with_capacity(line.points.len());
        let mut peclets = Vec::with_capacity(line.points.len());
        for (p, &x) in line.points.iter().enumerate() {
            let interval = cfg.interval_of_point(p).min(last);
            let speed = norm3(v_series[interval].sample(x)?);
            let pe = if sigma > 0.0 {
                speed / (sigma * norm3(grads[interval].sample(x)?) + eps)
            } else {
                f64::INFINITY
            };
            speeds.push(speed);
            peclets.push(pe);
        }
        line.speeds = speeds;
        line.peclets = peclets;
        Ok(())
    })
}

/// Start-to-end vectors of the pathlines at least `prune_threshold` long.
pub fn flux_vectors(pathlines: &[Pathline], prune_threshold: f64) -> Vec<FluxVector> {
    pathlines
        .iter()
        .filter_map(|line| {
            let length = line.displacement();
            (length >= prune_threshold).then(|| FluxVector {
                start: line.start(),
                end: line.end(),
                length,
            })
        })
        .collect()
}

/// Mean of the attached values falling into each nearest voxel; zero elsewhere.
pub fn rasterize(pathlines: &[Pathline], kind: MapKind, grid: &Grid) -> Result<Volume> {
    let n = grid.len();
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for line in pathlines {
        let values = match kind {
            MapKind::Speed => &line.speeds,
            MapKind::Peclet => &line.peclets,
        };
        if values.len() != line.points.len() {
            return Err(RomtError::Argument("pathline values are not attached".into()));
        }
        for (p, v) in line.points.iter().zip(values) {
            let idx = nearest_voxel(grid, *p)?;
            sum[idx] += v;
            count[idx] += 1;
        }
    }
    let data = sum
        .into_iter()
        .zip(count)
        .map(|(s, c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    Volume::new(*grid, data)
}

/// Nearest cell center, clamped onto the grid.
pub fn nearest_voxel(grid: &Grid, p: [f64; 3]) -> Result<usize> {
    if p.iter().any(|x| x.is_nan()) {
        return Err(RomtError::Argument(format!("cannot place point {p:?}")));
    }
    let dims = grid.dims();
    let c: [usize; 3] = std::array::from_fn(|a| p[a].round().clamp(0.0, (dims[a] - 1) as f64) as usize);
    grid.linear_index(c[0], c[1], c[2])
}

/// Median of `values`, ignoring NaN; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

/// Péclet samples grouped by the pair (loop) whose interval they belong to.
pub fn peclet_samples_by_pair(pathlines: &[Pathline], m: usize, cfg: &TraceConfig) -> Vec<Vec<f64>> {
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for line in pathlines {
        for (p, pe) in line.peclets.iter().enumerate() {
            let pair = cfg.interval_of_point(p) / m;
            if groups.len() <= pair {
                groups.resize_with(pair + 1, Vec::new);
            }
            groups[pair].push(*pe);
        }
    }
    groups
}

/// Pathlines, maps and flux vectors for a solved series.
#[derive(Clone, Debug)]
pub struct LagrangianOutput {
    pub pathlines: Vec<Pathline>,
    pub glyphs: GlyphSet,
    pub trace: TraceConfig,
    pub floor: f64,
}

impl LagrangianOutput {
    /// Pathlines at least `threshold` long, as displayed.
    pub fn displayed(&self, threshold: f64) -> impl Iterator<Item = &Pathline> {
        self.pathlines.iter().filter(move |l| l.displacement() >= threshold)
    }
}

/// Runs the full post-processing chain on `results` (in series order), seeding
/// from the first pair's starting image.
pub fn analyze_series(
    results: &[PairResult],
    sigma: f64,
    k_t: f64,
    cfg: &LagrangianConfig,
    mask: Option<&Volume>,
) -> Result<LagrangianOutput> {
    let first = results
        .first()
        .ok_or_else(|| RomtError::Argument("no solved pairs to analyze".into()))?;
    let grid = *first.rho0.grid();
    let mut v_series = Vec::new();
    let mut rho_series: Vec<&Volume> = Vec::new();
    for res in results {
        v_series.extend(res.v_final.fields());
        rho_series.extend(res.interval_start_densities());
    }
    let max = rho_series.iter().map(|r| r.max()).fold(0.0, f64::max);
    let floor = if max > 0.0 { cfg.floor_fraction * max } else { cfg.floor_fraction };

    let aug = v_series
        .iter()
        .zip(&rho_series)
        .map(|(v, r)| augmented_velocity(v, r, sigma, floor))
        .collect::<Result<Vec<_>>>()?;
    let trace = TraceConfig { k_t, n_sub: cfg.n_sub };
    let seeds = seed_points(&first.rho0, cfg.threshold_fraction, cfg.stride, mask)?;
    let mut pathlines = trace_pathlines(&seeds, &aug, &trace)?;
    attach_speed_peclet(&mut pathlines, &v_series, &rho_series, sigma, floor, cfg.peclet_eps, &trace)?;

    let glyphs = GlyphSet {
        speed_map: rasterize(&pathlines, MapKind::Speed, &grid)?,
        pe_map: rasterize(&pathlines, MapKind::Peclet, &grid)?,
        flux_vectors: flux_vectors(&pathlines, cfg.prune_threshold),
    };
    Ok(LagrangianOutput {
        pathlines,
        glyphs,
        trace,
        floor,
    })
}

fn hull(grid: &Grid) -> [f64; 3] {
    grid.dims().map(|d| (d - 1) as f64)
}

fn clamp(p: [f64; 3], hull: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|a| p[a].clamp(0.0, hull[a]))
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm3([b[0] - a[0], b[1] - a[1], b[2] - a[2]])
}
