use std::sync::Arc;

use log::{debug, warn};

use crate::error::{Result, RomtError};
use crate::grid::Volume;
use crate::transport::DiffusionContext;

use super::state::ChainOutput;
use super::{CostTerms, PairResult, RomtConfig, SolverState, StopReason, VelocityStack};

/// Relative floor applied to the Jacobi preconditioner's diagonal.
const PRECONDITIONER_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct StepSolve {
    pub step: Vec<f64>,
    pub iterations: usize,
    /// `||H x + g|| / ||g||` at the returned iterate.
    pub relative_residual: f64,
    /// Set when a non-positive curvature direction stopped the iteration.
    pub breakdown: bool,
}

/// Approximately solves `H x = -g` with Jacobi-preconditioned conjugate gradients.
pub fn solve_gn_step(state: &SolverState, g: &[f64]) -> Result<StepSolve> {
    let cfg = state.config();
    let len = g.len();
    let g_norm = norm(g);
    if g_norm == 0.0 {
        return Ok(StepSolve {
            step: vec![0.0; len],
            iterations: 0,
            relative_residual: 0.0,
            breakdown: false,
        });
    }

    let diag = state.hessian_diagonal();
    let max_diag = diag.iter().copied().fold(0.0, f64::max);
    let inv_diag: Vec<f64> = if max_diag > 0.0 {
        let floor = PRECONDITIONER_FLOOR * max_diag;
        diag.iter().map(|d| 1.0 / d.max(floor)).collect()
    } else {
        vec![1.0; len]
    };

    let mut x = vec![0.0; len];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut residual = 1.0;
    let mut iterations = 0;
    let mut breakdown = false;

    while iterations < cfg.pcg_max_iters && residual > cfg.pcg_rel_tol {
        let hp = state.hessian_apply(&p)?;
        let curvature = dot(&p, &hp);
        if curvature <= 0.0 || !curvature.is_finite() {
            warn!("PCG breakdown: curvature {curvature:.3e} along search direction");
            breakdown = true;
            break;
        }
        let alpha = rz / curvature;
        for i in 0..len {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        iterations += 1;
        residual = norm(&r) / g_norm;
        if residual <= cfg.pcg_rel_tol {
            break;
        }
        for i in 0..len {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..len {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(StepSolve {
        step: x,
        iterations,
        relative_residual: residual,
        breakdown,
    })
}

#[derive(Clone, Debug)]
pub enum LineSearch {
    Accepted {
        length: f64,
        cost: CostTerms,
        velocity: VelocityStack,
        chain: ChainOutput,
    },
    Failed,
}

/// Backtracking from a unit step, halving until the sufficient-decrease test
/// `F(v + l s) <= F(v) - c l |<g, s>|` passes. A zero step always fails.
pub fn line_search(state: &SolverState, g: &[f64], step: &[f64]) -> Result<LineSearch> {
    let cfg = state.config();
    if step.iter().any(|s| !s.is_finite()) {
        return Err(RomtError::Argument("line search step is not finite".into()));
    }
    let slope = dot(g, step).abs();
    if slope == 0.0 || step.iter().all(|&s| s == 0.0) {
        return Ok(LineSearch::Failed);
    }
    let current = state.cost().total();
    let v = state.velocity();
    let mut length = 1.0;
    for _ in 0..=cfg.ls_max_halvings {
        let trial: Vec<f64> = v.data().iter().zip(step).map(|(a, s)| a + length * s).collect();
        let trial = VelocityStack::new(*v.grid(), v.intervals(), trial)?;
        let (cost, chain) = state.trial_cost(&trial)?;
        if cost.total() <= current - cfg.ls_sufficient_decrease * length * slope {
            return Ok(LineSearch::Accepted {
                length,
                cost,
                velocity: trial,
                chain,
            });
        }
        length *= 0.5;
    }
    Ok(LineSearch::Failed)
}

/// Solves one image pair starting from `v = 0`.
pub fn gauss_newton(rho0: &Volume, rho1_obs: &Volume, cfg: &RomtConfig) -> Result<PairResult> {
    cfg.validate()?;
    let diffusion = Arc::new(DiffusionContext::new(*rho0.grid(), cfg.sigma, cfg.k_t)?);
    gauss_newton_with(rho0, rho1_obs, cfg, diffusion, None)
}

/// [`gauss_newton`] with a shared diffusion context and an optional fitting mask.
pub fn gauss_newton_with(
    rho0: &Volume,
    rho1_obs: &Volume,
    cfg: &RomtConfig,
    diffusion: Arc<DiffusionContext>,
    fit_mask: Option<&Volume>,
) -> Result<PairResult> {
    if !rho0.grid().same_shape(rho1_obs.grid()) {
        return Err(RomtError::Argument(format!(
            "image grids differ: {:?} vs {:?}",
            rho0.grid().dims(),
            rho1_obs.grid().dims()
        )));
    }
    let v0 = VelocityStack::zeros(*rho0.grid(), cfg.m);
    let mut state = SolverState::new(rho0.clone(), rho1_obs.clone(), v0, cfg, diffusion)?;
    if let Some(mask) = fit_mask {
        state = state.with_fit_mask(mask)?;
    }

    let mut history = vec![state.cost()];
    let mut pcg_total = 0;
    let mut stop = StopReason::MaxIters;
    let mut iterations = 0;
    for iter in 0..cfg.max_gn_iters {
        let g = state.gradient()?;
        let solve = solve_gn_step(&state, &g)?;
        pcg_total += solve.iterations;
        match line_search(&state, &g, &solve.step)? {
            LineSearch::Failed => {
                debug!("GN iteration {iter}: line search failed");
                stop = StopReason::LineSearchFailure;
                break;
            }
            LineSearch::Accepted {
                length,
                cost,
                velocity,
                chain,
            } => {
                state.accept(velocity, chain)?;
                history.push(cost);
                iterations = iter + 1;
                debug!(
                    "GN iteration {iter}: step {length}, pcg {} its (res {:.2e}), cost {:.6e} (energy {:.3e}, fit {:.3e})",
                    solve.iterations,
                    solve.relative_residual,
                    cost.total(),
                    cost.energy,
                    cost.fit
                );
            }
        }
    }

    Ok(PairResult {
        rho_interp: state.interpolation_volumes(),
        rho0: state.rho0().clone(),
        v_final: state.velocity().clone(),
        cost_history: history,
        stop_reason: stop,
        gn_iterations: iterations,
        pcg_iterations: pcg_total,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
