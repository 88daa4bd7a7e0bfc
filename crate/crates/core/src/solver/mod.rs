//! Gauss-Newton solver for the free-endpoint rOMT problem
//!
//! ```text
//! min_v  k_s k_t sum_i rho_{i+1}^T |v_i|^2  +  beta || rho_m - rho_obs ||^2
//! s.t.   rho_{i+1} = L^{-1} S(v_i) rho_i,   rho_0 = rho_0^obs
//! ```
//!
//! Derivatives of the interpolations with respect to the velocities are never
//! assembled; [`SolverState`] applies them through forward and backward sweeps
//! over the cached per-interval `S` and `B` operators.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RomtError};
use crate::grid::{Grid, VectorField, Volume};

mod optimize;
mod series;
mod state;

pub use optimize::{gauss_newton, gauss_newton_with, line_search, solve_gn_step, LineSearch, StepSolve};
pub use series::{run_series, run_series_with_workers, worker_count_from_env, THREADS_ENV};
pub use state::{forward_chain, ChainOutput, OperatorCache, SolverState};

/// How consecutive pairs of a series are chained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainMode {
    /// Pair `i` starts from the final interpolation of pair `i - 1`.
    #[default]
    Sequential,
    /// Every pair starts from its own observed image; pairs run concurrently.
    Parallel,
}

/// When the advection operators used by Jacobian products are built.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorCaching {
    /// Once per accepted Gauss-Newton iterate.
    #[default]
    Cached,
    /// Inside every Jacobian application, from `v` and `rho_0` alone. Same
    /// arithmetic, much more work; kept as a benchmark baseline.
    Naive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RomtConfig {
    pub sigma: f64,
    pub beta: f64,
    /// Time intervals per image pair.
    pub m: usize,
    pub k_t: f64,
    pub k_s: f64,
    pub max_gn_iters: usize,
    pub pcg_rel_tol: f64,
    pub pcg_max_iters: usize,
    pub ls_max_halvings: usize,
    pub ls_sufficient_decrease: f64,
    #[serde(alias = "mode")]
    pub chain_mode: ChainMode,
    pub operator_caching: OperatorCaching,
}

impl Default for RomtConfig {
    fn default() -> Self {
        Self {
            sigma: 0.002,
            beta: 5000.0,
            m: 10,
            k_t: 0.4,
            k_s: 1.0,
            max_gn_iters: 20,
            pcg_rel_tol: 1e-2,
            pcg_max_iters: 50,
            ls_max_halvings: 10,
            ls_sufficient_decrease: 1e-4,
            chain_mode: ChainMode::Sequential,
            operator_caching: OperatorCaching::Cached,
        }
    }
}

impl RomtConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(RomtError::Parameter(msg)) };
        check(self.sigma >= 0.0 && self.sigma.is_finite(), format!("sigma must be >= 0, got {}", self.sigma))?;
        check(self.beta >= 0.0 && self.beta.is_finite(), format!("beta must be >= 0, got {}", self.beta))?;
        check(self.m >= 1, "m must be >= 1".into())?;
        check(self.k_t > 0.0 && self.k_t.is_finite(), format!("k_t must be > 0, got {}", self.k_t))?;
        check(self.k_s > 0.0 && self.k_s.is_finite(), format!("k_s must be > 0, got {}", self.k_s))?;
        check(self.pcg_rel_tol > 0.0, format!("pcg_rel_tol must be > 0, got {}", self.pcg_rel_tol))?;
        check(
            self.ls_sufficient_decrease >= 0.0 && self.ls_sufficient_decrease < 1.0,
            format!("ls_sufficient_decrease must lie in [0, 1), got {}", self.ls_sufficient_decrease),
        )
    }
}

/// Velocities for all `m` intervals of one pair, flattened interval-major with
/// each interval laid out `[x | y | z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityStack {
    grid: Grid,
    m: usize,
    data: Vec<f64>,
}

impl VelocityStack {
    pub fn zeros(grid: Grid, m: usize) -> Self {
        Self {
            grid,
            m,
            data: vec![0.0; 3 * m * grid.len()],
        }
    }

    pub fn new(grid: Grid, m: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * m * grid.len() {
            return Err(RomtError::Argument(format!(
                "velocity stack needs {} entries for m = {m}, got {}",
                3 * m * grid.len(),
                data.len()
            )));
        }
        Ok(Self { grid, m, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn intervals(&self) -> usize {
        self.m
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn interval_data(&self, i: usize) -> &[f64] {
        let len = 3 * self.grid.len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn interval(&self, i: usize) -> VectorField {
        VectorField::new(self.grid, self.interval_data(i).to_vec())
            .expect("interval slice has 3n entries")
    }

    pub fn fields(&self) -> Vec<VectorField> {
        (0..self.m).map(|i| self.interval(i)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostTerms {
    pub energy: f64,
    pub fit: f64,
}

impl CostTerms {
    pub fn total(&self) -> f64 {
        self.energy + self.fit
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    LineSearchFailure,
}

#[derive(Clone, Debug)]
pub struct PairResult {
    pub v_final: VelocityStack,
    /// The image this pair was started from.
    pub rho0: Volume,
    /// `rho_1 ... rho_m`.
    pub rho_interp: Vec<Volume>,
    /// Cost at the initial guess followed by one entry per accepted step.
    pub cost_history: Vec<CostTerms>,
    pub stop_reason: StopReason,
    pub gn_iterations: usize,
    pub pcg_iterations: usize,
}

impl PairResult {
    pub fn final_cost(&self) -> CostTerms {
        *self.cost_history.last().expect("history holds the initial cost")
    }

    pub fn final_image(&self) -> &Volume {
        self.rho_interp.last().expect("m >= 1")
    }

    /// Density at the start of each interval: `rho_0 ... rho_{m-1}`.
    pub fn interval_start_densities(&self) -> Vec<&Volume> {
        std::iter::once(&self.rho0)
            .chain(self.rho_interp.iter().take(self.rho_interp.len() - 1))
            .collect()
    }
}
