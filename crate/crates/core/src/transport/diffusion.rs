use std::f64::consts::PI;

use log::warn;

use crate::error::{Result, RomtError};
use crate::grid::Grid;
use crate::sparse::SparseMatrix;

use super::build_diffusion_operator;

/// Grids up to this many voxels use the direct solve.
pub const DIRECT_SOLVE_MAX_VOXELS: usize = 32 * 32 * 32;

const DEFAULT_TOLERANCE: f64 = 1e-10;
const DEFAULT_MAX_ITERATIONS: usize = 1000;
/// Allowed `|sum(b) - sum(x)| / sum(|b|)` before the iterative solve may stop.
const MASS_DEFECT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DiffusionStrategy {
    /// Direct below [`DIRECT_SOLVE_MAX_VOXELS`], iterative above.
    #[default]
    Auto,
    Direct,
    Iterative,
}

#[derive(Clone, Debug)]
enum Solver {
    Identity,
    Spectral(SpectralSolver),
    Iterative { inv_diag: Vec<f64> },
}

/// Read-only state for solving `(I - k_t Q) x = b`; built once per grid and
/// shared by every step of a solve.
#[derive(Clone, Debug)]
pub struct DiffusionContext {
    grid: Grid,
    sigma: f64,
    k_t: f64,
    operator: SparseMatrix,
    solver: Solver,
    tolerance: f64,
    max_iterations: usize,
}

impl DiffusionContext {
    pub fn new(grid: Grid, sigma: f64, k_t: f64) -> Result<Self> {
        Self::with_strategy(grid, sigma, k_t, DiffusionStrategy::Auto)
    }

    pub fn with_strategy(
        grid: Grid,
        sigma: f64,
        k_t: f64,
        strategy: DiffusionStrategy,
    ) -> Result<Self> {
        if !(k_t > 0.0 && k_t.is_finite()) {
            return Err(RomtError::Parameter(format!("k_t must be > 0, got {k_t}")));
        }
        let operator = build_diffusion_operator(&grid, sigma, k_t)?;
        let solver = if sigma == 0.0 {
            Solver::Identity
        } else {
            let direct = match strategy {
                DiffusionStrategy::Auto => grid.len() <= DIRECT_SOLVE_MAX_VOXELS,
                DiffusionStrategy::Direct => true,
                DiffusionStrategy::Iterative => false,
            };
            if direct {
                Solver::Spectral(SpectralSolver::new(&grid, k_t * sigma))
            } else {
                Solver::Iterative {
                    inv_diag: operator.diagonal().iter().map(|d| 1.0 / d).collect(),
                }
            }
        };
        Ok(Self {
            grid,
            sigma,
            k_t,
            operator,
            solver,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        })
    }

    pub fn with_tolerance(mut self, tolerance: f64, max_iterations: usize) -> Self {
        self.tolerance = tolerance;
        self.max_iterations = max_iterations;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn k_t(&self) -> f64 {
        self.k_t
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// The assembled `L`.
    pub fn operator(&self) -> &SparseMatrix {
        &self.operator
    }

    pub fn is_direct(&self) -> bool {
        !matches!(self.solver, Solver::Iterative { .. })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = vec![0.0; b.len()];
        self.solve_into(b, &mut x)?;
        Ok(x)
    }

    pub fn solve_into(&self, b: &[f64], x: &mut [f64]) -> Result<()> {
        if b.len() != self.grid.len() || x.len() != b.len() {
            return Err(RomtError::Argument(format!(
                "diffusion solve expects {} entries, got {}",
                self.grid.len(),
                b.len()
            )));
        }
        match &self.solver {
            Solver::Identity => {
                x.copy_from_slice(b);
                Ok(())
            }
            Solver::Spectral(s) => {
                s.solve(b, x);
                Ok(())
            }
            Solver::Iterative { inv_diag } => self.pcg(b, x, inv_diag),
        }
    }

    /// In-place variant; `scratch` must have the grid's length.
    pub fn solve_in_place(&self, x: &mut [f64], scratch: &mut [f64]) -> Result<()> {
        scratch.copy_from_slice(x);
        self.solve_into(scratch, x)
    }

    fn pcg(&self, b: &[f64], x: &mut [f64], inv_diag: &[f64]) -> Result<()> {
        let n = b.len();
        let b_norm = norm(b);
        if b_norm == 0.0 {
            x.fill(0.0);
            return Ok(());
        }
        let b_mass: f64 = b.iter().sum();
        let b_abs: f64 = b.iter().map(|v| v.abs()).sum();

        // L is a small perturbation of I, so b is a good starting point.
        x.copy_from_slice(b);
        let mut r = vec![0.0; n];
        self.operator.matvec_into(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut q = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let mut residual = norm(&r) / b_norm;

        for it in 0..self.max_iterations {
            let mass_defect = (b_mass - x.iter().sum::<f64>()).abs() / b_abs;
            if residual <= self.tolerance && mass_defect <= MASS_DEFECT_TOLERANCE {
                return Ok(());
            }
            self.operator.matvec_into(&p, &mut q);
            let pq = dot(&p, &q);
            if pq <= 0.0 {
                break;
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            residual = norm(&r) / b_norm;
            if residual == 0.0 {
                return Ok(());
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            if it + 1 == self.max_iterations && residual <= self.tolerance {
                warn!("diffusion solve reached tolerance but mass defect {mass_defect:.2e} persists");
                return Ok(());
            }
        }
        if residual <= self.tolerance {
            return Ok(());
        }
        Err(RomtError::Convergence {
            residual,
            iterations: self.max_iterations,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Exact solve in the separable cosine eigenbasis of the Neumann Laplacian:
/// `L = I + c (K_x (+) K_y (+) K_z)` where each 1D `K` is the zero-flux
/// second-difference matrix, diagonalised by the orthonormal DCT-II vectors.
#[derive(Clone, Debug)]
struct SpectralSolver {
    grid: Grid,
    /// Per axis, row-major `N x N` with `basis[i * N + k] = u_k(i)`.
    bases: [Vec<f64>; 3],
    /// Per axis, flat index of the first voxel of each grid line along that axis.
    line_starts: [Vec<usize>; 3],
    inv_eigenvalues: Vec<f64>,
}

impl SpectralSolver {
    fn new(grid: &Grid, kt_sigma: f64) -> Self {
        let dims = grid.dims();
        let c = kt_sigma / (grid.spacing() * grid.spacing());
        let mut bases: [Vec<f64>; 3] = Default::default();
        let mut eig: [Vec<f64>; 3] = Default::default();
        for a in 0..3 {
            let n = dims[a];
            let nf = n as f64;
            bases[a] = (0..n * n)
                .map(|ik| {
                    let (i, k) = (ik / n, ik % n);
                    let norm = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
                    norm * (PI * k as f64 * (i as f64 + 0.5) / nf).cos()
                })
                .collect();
            eig[a] = (0..n)
                .map(|k| 4.0 * (PI * k as f64 / (2.0 * nf)).sin().powi(2))
                .collect();
        }
        let inv_eigenvalues = (0..grid.len())
            .map(|idx| {
                let [i, j, k] = grid.coords(idx);
                1.0 / (1.0 + c * (eig[0][i] + eig[1][j] + eig[2][k]))
            })
            .collect();
        let line_starts = std::array::from_fn(|a| {
            (0..grid.len())
                .filter(|&idx| grid.coords(idx)[a] == 0)
                .collect()
        });
        Self {
            grid: *grid,
            bases,
            line_starts,
            inv_eigenvalues,
        }
    }

    fn solve(&self, b: &[f64], x: &mut [f64]) {
        let mut line = vec![0.0; self.grid.dims().into_iter().max().unwrap()];
        x.copy_from_slice(b);
        for a in 0..3 {
            self.transform(x, a, true, &mut line);
        }
        for (xi, d) in x.iter_mut().zip(&self.inv_eigenvalues) {
            *xi *= d;
        }
        for a in (0..3).rev() {
            self.transform(x, a, false, &mut line);
        }
    }

    /// Applies `U^T` (analysis) or `U` (synthesis) along every line of `axis`.
    fn transform(&self, data: &mut [f64], axis: usize, analysis: bool, line: &mut [f64]) {
        let n = self.grid.dims()[axis];
        let stride = self.grid.stride(axis);
        let basis = &self.bases[axis];
        let line = &mut line[..n];
        for &start in &self.line_starts[axis] {
            for (i, l) in line.iter_mut().enumerate() {
                *l = data[start + i * stride];
            }
            for out in 0..n {
                let mut acc = 0.0;
                if analysis {
                    for (i, l) in line.iter().enumerate() {
                        acc += basis[i * n + out] * l;
                    }
                } else {
                    for (k, l) in line.iter().enumerate() {
                        acc += basis[out * n + k] * l;
                    }
                }
                data[start + out * stride] = acc;
            }
        }
    }
}
