use std::borrow::Cow;
use std::sync::Arc;

use crate::error::{Result, RomtError};
use crate::grid::{Grid, Volume};
use crate::transport::{fingerprint, AdvectionMatrix, DepositDerivative, DiffusionContext};

use super::{CostTerms, OperatorCaching, RomtConfig, VelocityStack};

/// Relative negative values tolerated in input images, so that a previous
/// pair's final interpolation can seed the next pair unchanged.
const NEGATIVE_ROUNDOFF: f64 = 1e-12;

/// Interpolations `rho_1 ... rho_m` and the advection matrices that produced them.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub rho: Vec<Vec<f64>>,
    pub s: Vec<AdvectionMatrix>,
}

/// Per-interval `S(v_j)` and `B(rho_j)`, `j = 0 .. m-1`, tagged with the
/// fingerprint of the velocity stack they were built from.
#[derive(Clone, Debug)]
pub struct OperatorCache {
    pub s: Vec<AdvectionMatrix>,
    pub b: Vec<DepositDerivative>,
    velocity_hash: u64,
}

impl OperatorCache {
    pub fn velocity_hash(&self) -> u64 {
        self.velocity_hash
    }
}

/// Runs `rho_{i+1} = L^{-1} S(v_i) rho_i` for every interval.
pub fn forward_chain(
    rho0: &Volume,
    v: &VelocityStack,
    k_t: f64,
    diffusion: &DiffusionContext,
) -> Result<ChainOutput> {
    if rho0.data().iter().any(|x| !x.is_finite()) {
        return Err(RomtError::Argument("rho0 is not finite".into()));
    }
    if !rho0.grid().same_shape(v.grid()) {
        return Err(RomtError::Argument("rho0 and velocity stack grids differ".into()));
    }
    let n = rho0.grid().len();
    let mut rho: Vec<Vec<f64>> = Vec::with_capacity(v.intervals());
    let mut s = Vec::with_capacity(v.intervals());
    let mut advected = vec![0.0; n];
    for i in 0..v.intervals() {
        let si = AdvectionMatrix::build(&v.interval(i), k_t)?;
        let prev: &[f64] = if i == 0 { rho0.data() } else { &rho[i - 1] };
        si.apply_into(prev, &mut advected);
        let mut next = vec![0.0; n];
        diffusion.solve_into(&advected, &mut next)?;
        rho.push(next);
        s.push(si);
    }
    Ok(ChainOutput { rho, s })
}

fn build_cache(
    grid: &Grid,
    rho0: &Volume,
    chain: &ChainOutput,
    velocity_hash: u64,
) -> Result<OperatorCache> {
    let b = chain
        .s
        .iter()
        .enumerate()
        .map(|(j, sj)| {
            let rho_j = if j == 0 {
                Cow::Borrowed(rho0)
            } else {
                Cow::Owned(Volume::new(*grid, chain.rho[j - 1].clone())?)
            };
            DepositDerivative::from_advection(sj, &rho_j)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OperatorCache {
        s: chain.s.clone(),
        b,
        velocity_hash,
    })
}

/// Everything needed to evaluate the cost, its gradient, and Gauss-Newton
/// Hessian products at one velocity iterate.
#[derive(Clone, Debug)]
pub struct SolverState {
    grid: Grid,
    cfg: RomtConfig,
    v: VelocityStack,
    velocity_hash: u64,
    rho0: Volume,
    rho1_obs: Volume,
    fit_mask: Option<Vec<f64>>,
    rho: Vec<Vec<f64>>,
    cache: OperatorCache,
    diffusion: Arc<DiffusionContext>,
}

impl SolverState {
    pub fn new(
        rho0: Volume,
        rho1_obs: Volume,
        v: VelocityStack,
        cfg: &RomtConfig,
        diffusion: Arc<DiffusionContext>,
    ) -> Result<Self> {
        cfg.validate()?;
        rho0.check_nearly_nonnegative(NEGATIVE_ROUNDOFF)?;
        rho1_obs.check_nearly_nonnegative(NEGATIVE_ROUNDOFF)?;
        let grid = *rho0.grid();
        if !grid.same_shape(rho1_obs.grid()) || !grid.same_shape(v.grid()) {
            return Err(RomtError::Argument(
                "rho0, rho1_obs and velocity stack must share one grid".into(),
            ));
        }
        if !grid.same_shape(diffusion.grid()) {
            return Err(RomtError::Argument("diffusion context built for another grid".into()));
        }
        if v.intervals() != cfg.m {
            return Err(RomtError::Argument(format!(
                "velocity stack has {} intervals, config expects {}",
                v.intervals(),
                cfg.m
            )));
        }
        let chain = forward_chain(&rho0, &v, cfg.k_t, &diffusion)?;
        let velocity_hash = fingerprint(v.data());
        let cache = build_cache(&grid, &rho0, &chain, velocity_hash)?;
        Ok(Self {
            grid,
            cfg: cfg.clone(),
            v,
            velocity_hash,
            rho0,
            rho1_obs,
            fit_mask: None,
            rho: chain.rho,
            cache,
            diffusion,
        })
    }

    /// Restricts the fitting term to voxels where `mask > 0`.
    pub fn with_fit_mask(mut self, mask: &Volume) -> Result<Self> {
        if !mask.grid().same_shape(&self.grid) {
            return Err(RomtError::Argument("mask grid differs from the image grid".into()));
        }
        self.fit_mask = Some(
            mask.data()
                .iter()
                .map(|&m| if m > 0.0 { 1.0 } else { 0.0 })
                .collect(),
        );
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn config(&self) -> &RomtConfig {
        &self.cfg
    }

    pub fn velocity(&self) -> &VelocityStack {
        &self.v
    }

    pub fn rho0(&self) -> &Volume {
        &self.rho0
    }

    pub fn rho1_obs(&self) -> &Volume {
        &self.rho1_obs
    }

    pub fn diffusion(&self) -> &Arc<DiffusionContext> {
        &self.diffusion
    }

    /// `rho_1 ... rho_m` as flat arrays.
    pub fn interpolations(&self) -> &[Vec<f64>] {
        &self.rho
    }

    pub fn interpolation_volumes(&self) -> Vec<Volume> {
        self.rho
            .iter()
            .map(|r| Volume::new(self.grid, r.clone()).expect("interpolation has n entries"))
            .collect()
    }

    pub fn cache(&self) -> &OperatorCache {
        &self.cache
    }

    pub fn cache_is_current(&self) -> bool {
        self.cache.velocity_hash == self.velocity_hash
    }

    /// Moves to a new iterate, rebuilding interpolations and every cached operator.
    pub fn set_velocity(&mut self, v: VelocityStack) -> Result<()> {
        let chain = forward_chain(&self.rho0, &v, self.cfg.k_t, &self.diffusion)?;
        self.accept(v, chain)
    }

    /// Moves to an iterate whose forward chain has already been evaluated.
    pub(crate) fn accept(&mut self, v: VelocityStack, chain: ChainOutput) -> Result<()> {
        let hash = fingerprint(v.data());
        self.cache = build_cache(&self.grid, &self.rho0, &chain, hash)?;
        self.velocity_hash = hash;
        self.rho = chain.rho;
        self.v = v;
        Ok(())
    }

    /// Moves to a new iterate but leaves the derivative cache untouched; Jacobian
    /// products fail with [`RomtError::CacheStale`] until [`Self::rebuild_cache`].
    pub fn set_velocity_deferred(&mut self, v: VelocityStack) -> Result<()> {
        let chain = forward_chain(&self.rho0, &v, self.cfg.k_t, &self.diffusion)?;
        self.velocity_hash = fingerprint(v.data());
        self.rho = chain.rho;
        self.v = v;
        Ok(())
    }

    pub fn rebuild_cache(&mut self) -> Result<()> {
        let chain = forward_chain(&self.rho0, &self.v, self.cfg.k_t, &self.diffusion)?;
        self.cache = build_cache(&self.grid, &self.rho0, &chain, self.velocity_hash)?;
        Ok(())
    }

    pub fn cost(&self) -> CostTerms {
        cost_terms(&self.cfg, self.v.data(), &self.rho, self.rho1_obs.data(), self.fit_mask.as_deref())
    }

    /// Cost at a trial velocity without touching this state. Returns the chain
    /// so an accepted trial need not be recomputed.
    pub fn trial_cost(&self, v: &VelocityStack) -> Result<(CostTerms, ChainOutput)> {
        let chain = forward_chain(&self.rho0, v, self.cfg.k_t, &self.diffusion)?;
        let cost = cost_terms(&self.cfg, v.data(), &chain.rho, self.rho1_obs.data(), self.fit_mask.as_deref());
        Ok((cost, chain))
    }

    fn operators(&self) -> Result<Cow<'_, OperatorCache>> {
        match self.cfg.operator_caching {
            OperatorCaching::Cached => {
                if !self.cache_is_current() {
                    return Err(RomtError::CacheStale {
                        cached: self.cache.velocity_hash,
                        current: self.velocity_hash,
                    });
                }
                Ok(Cow::Borrowed(&self.cache))
            }
            OperatorCaching::Naive => {
                let chain = forward_chain(&self.rho0, &self.v, self.cfg.k_t, &self.diffusion)?;
                Ok(Cow::Owned(build_cache(&self.grid, &self.rho0, &chain, self.velocity_hash)?))
            }
        }
    }

    fn check_len(&self, got: usize, want: usize, what: &str) -> Result<()> {
        if got != want {
            return Err(RomtError::Argument(format!("{what} has length {got}, expected {want}")));
        }
        Ok(())
    }

    /// `J_m x`: sensitivity of the final interpolation to a velocity perturbation.
    pub fn jm_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.len();
        self.check_len(x.len(), 3 * self.cfg.m * n, "velocity perturbation")?;
        let ops = self.operators()?;
        let mut out = vec![0.0; n];
        self.forward_sweep(&ops, x, &mut out)?;
        Ok(out)
    }

    /// `J_m^T y`.
    pub fn jmt_apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.len();
        self.check_len(y.len(), n, "image residual")?;
        let ops = self.operators()?;
        let mut out = vec![0.0; 3 * self.cfg.m * n];
        self.backward_sweep(&ops, |k| (k == self.cfg.m).then_some(y), &mut out)?;
        Ok(out)
    }

    /// `J^T w = sum_k J_k^T w_k` for one image-shaped block per interpolation.
    pub fn jt_apply(&self, w: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = self.grid.len();
        self.check_len(w.len(), self.cfg.m, "block list")?;
        for wk in w {
            self.check_len(wk.len(), n, "block")?;
        }
        let ops = self.operators()?;
        let mut out = vec![0.0; 3 * self.cfg.m * n];
        self.backward_sweep(&ops, |k| Some(w[k - 1].as_slice()), &mut out)?;
        Ok(out)
    }

    /// `a <- L^{-1} (S_j a + B_j x_j)` for `j = 0 .. m-1`, starting from zero.
    fn forward_sweep(&self, ops: &OperatorCache, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.grid.len();
        let mut acc = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for j in 0..self.cfg.m {
            ops.s[j].apply_into(&acc, &mut rhs);
            ops.b[j].apply_add(&x[3 * n * j..3 * n * (j + 1)], &mut rhs);
            self.diffusion.solve_into(&rhs, &mut acc)?;
        }
        out.copy_from_slice(&acc);
        Ok(())
    }

    /// Adjoint sweep. `inject(k)` supplies the cotangent of `rho_k`, `k = 1 .. m`.
    fn backward_sweep<'a>(
        &self,
        ops: &OperatorCache,
        inject: impl Fn(usize) -> Option<&'a [f64]>,
        out: &mut [f64],
    ) -> Result<()> {
        let n = self.grid.len();
        let mut adj = vec![0.0; n];
        let mut solved = vec![0.0; n];
        for j in (0..self.cfg.m).rev() {
            if let Some(w) = inject(j + 1) {
                for (a, wi) in adj.iter_mut().zip(w) {
                    *a += wi;
                }
            }
            self.diffusion.solve_into(&adj, &mut solved)?;
            ops.b[j].apply_transpose_into(&solved, &mut out[3 * n * j..3 * n * (j + 1)]);
            if j > 0 {
                ops.s[j].apply_transpose_into(&solved, &mut adj);
            }
        }
        Ok(())
    }

    /// Per-coordinate weight `k_s k_t rho_{i+1}` of the kinetic energy; the
    /// Hessian's diagonal term is twice this.
    fn energy_weights(&self) -> Vec<f64> {
        let scale = self.cfg.k_s * self.cfg.k_t;
        self.rho
            .iter()
            .flat_map(|r| (0..3).flat_map(move |_| r.iter().map(move |x| scale * x)))
            .collect()
    }

    /// `2 k_s k_t diag(rho^T M)`.
    pub fn hessian_diagonal(&self) -> Vec<f64> {
        self.energy_weights().into_iter().map(|w| 2.0 * w).collect()
    }

    fn masked(&self, mut r: Vec<f64>) -> Vec<f64> {
        if let Some(mask) = &self.fit_mask {
            for (x, m) in r.iter_mut().zip(mask) {
                *x *= m;
            }
        }
        r
    }

    /// Analytic gradient of the cost.
    pub fn gradient(&self) -> Result<Vec<f64>> {
        let n = self.grid.len();
        let m = self.cfg.m;
        let scale = self.cfg.k_s * self.cfg.k_t;
        let v = self.v.data();

        // explicit dependence on v
        let mut g: Vec<f64> = self
            .energy_weights()
            .iter()
            .zip(v)
            .map(|(w, x)| 2.0 * w * x)
            .collect();

        // dependence through the interpolations
        let mut w: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let vi = &v[3 * n * i..3 * n * (i + 1)];
                (0..n)
                    .map(|p| scale * (vi[p] * vi[p] + vi[n + p] * vi[n + p] + vi[2 * n + p] * vi[2 * n + p]))
                    .collect()
            })
            .collect();
        let residual = self.masked(
            self.rho[m - 1]
                .iter()
                .zip(self.rho1_obs.data())
                .map(|(a, b)| 2.0 * self.cfg.beta * (a - b))
                .collect(),
        );
        for (wi, ri) in w[m - 1].iter_mut().zip(&residual) {
            *wi += ri;
        }

        let ops = self.operators()?;
        let mut through = vec![0.0; 3 * m * n];
        self.backward_sweep(&ops, |k| Some(w[k - 1].as_slice()), &mut through)?;
        for (gi, ti) in g.iter_mut().zip(&through) {
            *gi += ti;
        }
        Ok(g)
    }

    /// `H x = 2 k_s k_t diag(rho^T M) x + 2 beta J_m^T J_m x`.
    ///
    /// With cached operators both sweeps share one operator borrow; the naive
    /// mode goes through the public nested calls and rebuilds each time.
    pub fn hessian_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.len();
        self.check_len(x.len(), 3 * self.cfg.m * n, "velocity perturbation")?;
        let gn = match self.cfg.operator_caching {
            OperatorCaching::Cached => {
                let ops = self.operators()?;
                let mut jx = vec![0.0; n];
                self.forward_sweep(&ops, x, &mut jx)?;
                let jx = self.masked(jx);
                let mut out = vec![0.0; x.len()];
                self.backward_sweep(&ops, |k| (k == self.cfg.m).then_some(jx.as_slice()), &mut out)?;
                out
            }
            OperatorCaching::Naive => self.jmt_apply(&self.masked(self.jm_apply(x)?))?,
        };
        let two_beta = 2.0 * self.cfg.beta;
        Ok(self
            .hessian_diagonal()
            .iter()
            .zip(x)
            .zip(&gn)
            .map(|((d, xi), ji)| d * xi + two_beta * ji)
            .collect())
    }
}

fn cost_terms(
    cfg: &RomtConfig,
    v: &[f64],
    rho: &[Vec<f64>],
    rho1_obs: &[f64],
    mask: Option<&[f64]>,
) -> CostTerms {
    let n = rho1_obs.len();
    let mut energy = 0.0;
    for (i, r) in rho.iter().enumerate() {
        let vi = &v[3 * n * i..3 * n * (i + 1)];
        for p in 0..n {
            energy += r[p] * (vi[p] * vi[p] + vi[n + p] * vi[n + p] + vi[2 * n + p] * vi[2 * n + p]);
        }
    }
    energy *= cfg.k_s * cfg.k_t;
    let last = rho.last().expect("m >= 1");
    let fit: f64 = last
        .iter()
        .zip(rho1_obs)
        .enumerate()
        .map(|(p, (a, b))| {
            let w = mask.map_or(1.0, |m| m[p]);
            w * (a - b) * (a - b)
        })
        .sum();
    CostTerms {
        energy,
        fit: cfg.beta * fit,
    }
}
