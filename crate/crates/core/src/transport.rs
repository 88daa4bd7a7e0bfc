//! One pipeline interval: particle-in-cell advection `S(v)`, its
//! density-weighted velocity derivative `B(rho)`, and the backward-Euler
//! diffusion solve with `L = I - k_t Q`.

use std::sync::Arc;

use crate::error::{Result, RomtError};
use crate::grid::{build_neg_laplacian, CellLocation, Grid, VectorField, Volume};
use crate::sparse::SparseMatrix;

mod diffusion;

pub use diffusion::{DiffusionContext, DiffusionStrategy, DIRECT_SOLVE_MAX_VOXELS};

/// FNV-1a over the bit patterns of a float slice.
pub fn fingerprint(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// `S(v)`: column `j` deposits the mass of source voxel `j`, displaced by
/// `k_t v_j`, onto the 8 cell centers around its landing point.
///
/// Stored as one [`CellLocation`] per source voxel; every column has at most 8
/// nonzeros and sums to one.
#[derive(Clone, Debug)]
pub struct AdvectionMatrix {
    grid: Grid,
    landings: Arc<[CellLocation]>,
    /// `k_t / h`, converting velocity to voxel displacement.
    displacement_scale: f64,
    source_velocity_hash: u64,
}

impl AdvectionMatrix {
    pub fn build(v: &VectorField, k_t: f64) -> Result<Self> {
        let grid = *v.grid();
        if let Some(pos) = v.data().iter().position(|x| !x.is_finite()) {
            return Err(RomtError::Argument(format!(
                "velocity component {} is not finite",
                pos
            )));
        }
        let scale = k_t / grid.spacing();
        let landings = (0..grid.len())
            .map(|j| {
                let c = grid.coords(j);
                let u = v.at(j);
                let p = [
                    c[0] as f64 + scale * u[0],
                    c[1] as f64 + scale * u[1],
                    c[2] as f64 + scale * u[2],
                ];
                CellLocation::locate(p, &grid)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            landings: landings.into(),
            displacement_scale: scale,
            source_velocity_hash: fingerprint(v.data()),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn source_velocity_hash(&self) -> u64 {
        self.source_velocity_hash
    }

    /// `y = S x`
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        self.apply_add(x, y);
    }

    /// `y += S x`
    pub fn apply_add(&self, x: &[f64], y: &mut [f64]) {
        for (loc, &xj) in self.landings.iter().zip(x) {
            if xj == 0.0 {
                continue;
            }
            for (c, w) in loc.corners(&self.grid).into_iter().zip(loc.weights()) {
                y[c] += w * xj;
            }
        }
    }

    /// `y = S^T x`
    pub fn apply_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        for (loc, yj) in self.landings.iter().zip(y.iter_mut()) {
            *yj = loc.interpolate(&self.grid, x);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.apply_into(x, &mut y);
        y
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        let n = self.grid.len();
        let triplets = self.landings.iter().enumerate().flat_map(|(j, loc)| {
            loc.corners(&self.grid)
                .into_iter()
                .zip(loc.weights())
                .filter(|(_, w)| *w != 0.0)
                .map(move |(c, w)| (c, j, w))
        });
        SparseMatrix::from_triplets(n, n, triplets).expect("deposit corners lie on the grid")
    }
}

/// `B(rho) = d/dv (S(v) rho)`, an `n x 3n` operator. Column `(axis, j)` holds
/// `k_t/h * rho_j * d w_j / d position[axis]` on the 8 deposit corners of
/// particle `j`. Shares its landing points with the `S(v)` it was derived from.
#[derive(Clone, Debug)]
pub struct DepositDerivative {
    grid: Grid,
    landings: Arc<[CellLocation]>,
    scale: Vec<f64>,
    source_density_hash: u64,
}

impl DepositDerivative {
    pub fn build(rho: &Volume, v: &VectorField, k_t: f64) -> Result<Self> {
        let s = AdvectionMatrix::build(v, k_t)?;
        Self::from_advection(&s, rho)
    }

    /// Reuses the landing points of an already-built `S(v)`.
    pub fn from_advection(s: &AdvectionMatrix, rho: &Volume) -> Result<Self> {
        if !rho.grid().same_shape(&s.grid) {
            return Err(RomtError::Argument(
                "density and velocity live on different grids".into(),
            ));
        }
        if rho.data().iter().any(|x| !x.is_finite()) {
            return Err(RomtError::Argument("density is not finite".into()));
        }
        Ok(Self {
            grid: s.grid,
            landings: s.landings.clone(),
            scale: rho.data().iter().map(|r| r * s.displacement_scale).collect(),
            source_density_hash: fingerprint(rho.data()),
        })
    }

    pub fn source_density_hash(&self) -> u64 {
        self.source_density_hash
    }

    /// `y += B x`, with `x` of length `3n` laid out `[x | y | z]`.
    pub fn apply_add(&self, x: &[f64], y: &mut [f64]) {
        let n = self.grid.len();
        for (j, loc) in self.landings.iter().enumerate() {
            let s = self.scale[j];
            if s == 0.0 {
                continue;
            }
            let corners = loc.corners(&self.grid);
            for axis in 0..3 {
                let xa = x[axis * n + j];
                if xa == 0.0 {
                    continue;
                }
                let f = s * xa;
                for (c, dw) in corners.iter().zip(loc.weight_derivatives(axis)) {
                    y[*c] += f * dw;
                }
            }
        }
    }

    /// `y = B^T x`, `y` of length `3n`.
    pub fn apply_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.grid.len();
        for (j, loc) in self.landings.iter().enumerate() {
            let s = self.scale[j];
            if s == 0.0 {
                for axis in 0..3 {
                    y[axis * n + j] = 0.0;
                }
                continue;
            }
            let corners = loc.corners(&self.grid);
            for axis in 0..3 {
                let dot: f64 = corners
                    .iter()
                    .zip(loc.weight_derivatives(axis))
                    .map(|(c, dw)| dw * x[*c])
                    .sum();
                y[axis * n + j] = s * dot;
            }
        }
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        let n = self.grid.len();
        let mut triplets = Vec::new();
        for (j, loc) in self.landings.iter().enumerate() {
            let corners = loc.corners(&self.grid);
            for axis in 0..3 {
                for (c, dw) in corners.iter().zip(loc.weight_derivatives(axis)) {
                    let v = self.scale[j] * dw;
                    if v != 0.0 {
                        triplets.push((*c, axis * n + j, v));
                    }
                }
            }
        }
        SparseMatrix::from_triplets(n, 3 * n, triplets).expect("deposit corners lie on the grid")
    }
}

pub fn build_s(v: &VectorField, k_t: f64) -> Result<AdvectionMatrix> {
    AdvectionMatrix::build(v, k_t)
}

pub fn build_b(rho: &Volume, v: &VectorField, k_t: f64) -> Result<DepositDerivative> {
    DepositDerivative::build(rho, v, k_t)
}

/// Solves `L x = b`.
pub fn diffuse_implicit(b: &Volume, ctx: &DiffusionContext) -> Result<Volume> {
    let x = ctx.solve(b.data())?;
    Volume::new(*b.grid(), x)
}

/// `rho_{i+1} = L^{-1} S(v_i) rho_i`
pub fn advect_diffuse_step(
    rho: &Volume,
    s: &AdvectionMatrix,
    ctx: &DiffusionContext,
) -> Result<Volume> {
    if !rho.grid().same_shape(s.grid()) || !rho.grid().same_shape(ctx.grid()) {
        return Err(RomtError::Argument("step inputs live on different grids".into()));
    }
    let advected = s.apply(rho.data());
    Volume::new(*rho.grid(), ctx.solve(&advected)?)
}

/// `L = I - k_t Q` assembled explicitly.
pub fn build_diffusion_operator(grid: &Grid, sigma: f64, k_t: f64) -> Result<SparseMatrix> {
    let q = build_neg_laplacian(grid, sigma)?;
    let n = grid.len();
    SparseMatrix::from_triplets(
        n,
        n,
        q.triplets()
            .map(|(r, c, v)| (r, c, -k_t * v))
            .chain((0..n).map(|i| (i, i, 1.0))),
    )
}
