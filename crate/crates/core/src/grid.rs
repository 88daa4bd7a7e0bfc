//! Cell-centered uniform 3D grids, scalar and vector fields on them, and the
//! discrete operators shared by the transport and post-processing code.
//!
//! Voxel `(i, j, k)` has its center at voxel coordinate `(i, j, k)`; physical
//! positions are voxel coordinates times `spacing`. Flat storage is x-fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RomtError};
use crate::sparse::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dims: [usize; 3],
    spacing: f64,
    voxel_volume: f64,
}

impl Grid {
    /// Unit spacing and unit voxel volume.
    pub fn new(dims: [usize; 3]) -> Result<Self> {
        Self::with_spacing(dims, 1.0, 1.0)
    }

    pub fn with_spacing(dims: [usize; 3], spacing: f64, voxel_volume: f64) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(RomtError::Parameter(format!(
                "grid dims must all be >= 2, got {dims:?}"
            )));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(RomtError::Parameter(format!("spacing must be > 0, got {spacing}")));
        }
        if !(voxel_volume > 0.0 && voxel_volume.is_finite()) {
            return Err(RomtError::Parameter(format!(
                "voxel volume must be > 0, got {voxel_volume}"
            )));
        }
        Ok(Self {
            dims,
            spacing,
            voxel_volume,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn voxel_volume(&self) -> f64 {
        self.voxel_volume
    }

    /// Total voxel count `nx * ny * nz`.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> Result<usize> {
        let [nx, ny, nz] = self.dims;
        if i >= nx || j >= ny || k >= nz {
            return Err(RomtError::Index {
                i,
                j,
                k,
                dims: self.dims,
            });
        }
        Ok(self.index_unchecked(i, j, k))
    }

    #[inline]
    pub(crate) fn index_unchecked(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Inverse of [`Grid::linear_index`].
    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Stride of one step along `axis` in flat storage.
    #[inline]
    pub(crate) fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.dims[0],
            _ => self.dims[0] * self.dims[1],
        }
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }
}

/// Scalar field (density image).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    grid: Grid,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(RomtError::Argument(format!(
                "volume data has {} entries, grid {:?} needs {}",
                data.len(),
                grid.dims(),
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    /// Like [`Volume::new`] but rejects negative or non-finite entries.
    pub fn density(grid: Grid, data: Vec<f64>) -> Result<Self> {
        let vol = Self::new(grid, data)?;
        vol.check_density()?;
        Ok(vol)
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let data = (0..grid.len())
            .map(|idx| {
                let [i, j, k] = grid.coords(idx);
                f(i, j, k)
            })
            .collect();
        Self { grid, data }
    }

    pub fn check_density(&self) -> Result<()> {
        self.check_nearly_nonnegative(0.0)
    }

    /// Accepts negative entries down to `-rel_tol * max`, the roundoff left
    /// behind by a diffusion solve.
    pub fn check_nearly_nonnegative(&self, rel_tol: f64) -> Result<()> {
        let floor = -rel_tol * self.max().max(0.0);
        match self.data.iter().position(|v| !(v.is_finite() && *v >= floor)) {
            None => Ok(()),
            Some(idx) => Err(RomtError::Argument(format!(
                "density must be finite and nonnegative, voxel {:?} holds {}",
                self.grid.coords(idx),
                self.data[idx]
            ))),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.index_unchecked(i, j, k)]
    }

    pub fn total_mass(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sample(&self, point: [f64; 3]) -> Result<f64> {
        let loc = CellLocation::locate(point, &self.grid)?;
        Ok(loc.interpolate(&self.grid, &self.data))
    }
}

/// Three-component field stored component-blocked: `[x | y | z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: Grid,
    data: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * grid.len() {
            return Err(RomtError::Argument(format!(
                "vector field data has {} entries, grid {:?} needs {}",
                data.len(),
                grid.dims(),
                3 * grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            data: vec![0.0; 3 * grid.len()],
        }
    }

    pub fn uniform(grid: Grid, value: [f64; 3]) -> Self {
        let n = grid.len();
        let data = (0..3).flat_map(|a| std::iter::repeat_n(value[a], n)).collect();
        Self { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[axis * n..(axis + 1) * n]
    }

    pub fn at(&self, idx: usize) -> [f64; 3] {
        let n = self.grid.len();
        [self.data[idx], self.data[n + idx], self.data[2 * n + idx]]
    }

    pub fn sample(&self, point: [f64; 3]) -> Result<[f64; 3]> {
        let loc = CellLocation::locate(point, &self.grid)?;
        let mut out = [0.0; 3];
        for (axis, o) in out.iter_mut().enumerate() {
            *o = loc.interpolate(&self.grid, self.component(axis));
        }
        Ok(out)
    }
}

/// Location of a point relative to the cell-center lattice: the lower corner
/// of its enclosing cell and the fractional offset inside it.
///
/// Points outside the cell-center hull are clamped to it; `moving[a]` is false
/// along such axes, so position derivatives vanish there. A point exactly on a
/// cell-center plane belongs to the cell on its right, except on the upper hull
/// face where the right-hand limit is clamped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct CellLocation {
    pub base: usize,
    pub frac: [f64; 3],
    pub moving: [bool; 3],
}

impl CellLocation {
    pub fn locate(point: [f64; 3], grid: &Grid) -> Result<Self> {
        if point.iter().any(|p| p.is_nan()) {
            return Err(RomtError::Argument(format!("cannot locate point {point:?}")));
        }
        let dims = grid.dims();
        let mut lower = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut moving = [false; 3];
        for a in 0..3 {
            let upper = (dims[a] - 1) as f64;
            moving[a] = (0.0..upper).contains(&point[a]);
            let p = point[a].clamp(0.0, upper);
            lower[a] = (p.floor() as usize).min(dims[a] - 2);
            frac[a] = p - lower[a] as f64;
        }
        Ok(Self {
            base: grid.index_unchecked(lower[0], lower[1], lower[2]),
            frac,
            moving,
        })
    }

    /// Flat indices of the 8 surrounding centers, ordered `c = dx + 2 dy + 4 dz`.
    #[inline]
    pub fn corners(&self, grid: &Grid) -> [usize; 8] {
        let sy = grid.stride(1);
        let sz = grid.stride(2);
        let b = self.base;
        [b, b + 1, b + sy, b + sy + 1, b + sz, b + sz + 1, b + sz + sy, b + sz + sy + 1]
    }

    #[inline]
    pub fn weights(&self) -> [f64; 8] {
        let [fx, fy, fz] = self.frac;
        let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
        [
            gx * gy * gz,
            fx * gy * gz,
            gx * fy * gz,
            fx * fy * gz,
            gx * gy * fz,
            fx * gy * fz,
            gx * fy * fz,
            fx * fy * fz,
        ]
    }

    /// `d weights / d position[axis]`, in voxel units.
    #[inline]
    pub fn weight_derivatives(&self, axis: usize) -> [f64; 8] {
        if !self.moving[axis] {
            return [0.0; 8];
        }
        let mut lo = [1.0 - self.frac[0], 1.0 - self.frac[1], 1.0 - self.frac[2]];
        let mut hi = self.frac;
        lo[axis] = -1.0;
        hi[axis] = 1.0;
        let mut out = [0.0; 8];
        for (c, o) in out.iter_mut().enumerate() {
            let f = |a: usize| if (c >> a) & 1 == 1 { hi[a] } else { lo[a] };
            *o = f(0) * f(1) * f(2);
        }
        out
    }

    #[inline]
    pub fn interpolate(&self, grid: &Grid, values: &[f64]) -> f64 {
        self.corners(grid)
            .iter()
            .zip(self.weights())
            .map(|(&c, w)| w * values[c])
            .sum()
    }
}

/// `Q = sigma * Lap_h`: 7-point stencil with zero-flux boundary closure. Every
/// row and column of the result sums to zero.
pub fn build_neg_laplacian(grid: &Grid, sigma: f64) -> Result<SparseMatrix> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(RomtError::Parameter(format!("sigma must be >= 0, got {sigma}")));
    }
    let n = grid.len();
    if sigma == 0.0 {
        return SparseMatrix::from_triplets(n, n, std::iter::empty());
    }
    let coef = sigma / (grid.spacing() * grid.spacing());
    let dims = grid.dims();
    let mut triplets = Vec::with_capacity(7 * n);
    for idx in 0..n {
        let ijk = grid.coords(idx);
        let mut neighbors = 0usize;
        for a in 0..3 {
            let stride = grid.stride(a);
            if ijk[a] > 0 {
                triplets.push((idx, idx - stride, coef));
                neighbors += 1;
            }
            if ijk[a] + 1 < dims[a] {
                triplets.push((idx, idx + stride, coef));
                neighbors += 1;
            }
        }
        triplets.push((idx, idx, -(neighbors as f64) * coef));
    }
    SparseMatrix::from_triplets(n, n, triplets)
}

/// Central differences in the interior, one-sided differences on boundary voxels.
pub fn gradient_field(rho: &Volume) -> VectorField {
    let grid = *rho.grid();
    let n = grid.len();
    let h = grid.spacing();
    let dims = grid.dims();
    let f = rho.data();
    let mut out = vec![0.0; 3 * n];
    for idx in 0..n {
        let ijk = grid.coords(idx);
        for a in 0..3 {
            let s = grid.stride(a);
            let d = if ijk[a] == 0 {
                (f[idx + s] - f[idx]) / h
            } else if ijk[a] + 1 == dims[a] {
                (f[idx] - f[idx - s]) / h
            } else {
                (f[idx + s] - f[idx - s]) / (2.0 * h)
            };
            out[a * n + idx] = d;
        }
    }
    VectorField { grid, data: out }
}
