//! Dense linear-algebra oracles and random problem generators shared by the
//! integration tests. Nothing here calls the sweep-based Jacobian code.
#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use romt_core::transport::DiffusionContext;
use romt_core::{Grid, RomtConfig, SolverState, VelocityStack, Volume};

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn zeros(rows: usize, cols: usize) -> Dense {
    vec![vec![0.0; cols]; rows]
}

pub fn identity(n: usize) -> Dense {
    let mut a = zeros(n, n);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    a
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (r, k, c) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(r, c);
    for i in 0..r {
        for p in 0..k {
            let aip = a[i][p];
            if aip == 0.0 {
                continue;
            }
            for j in 0..c {
                out[i][j] += aip * b[p][j];
            }
        }
    }
    out
}

pub fn matvec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn transpose(a: &Dense) -> Dense {
    let mut t = zeros(a[0].len(), a.len());
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            t[j][i] = *v;
        }
    }
    t
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Dense) -> Dense {
    let n = a.len();
    let mut m = a.clone();
    let mut inv = identity(n);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        inv.swap(col, piv);
        let d = m[col][col];
        for j in 0..n {
            m[col][j] /= d;
            inv[col][j] /= d;
        }
        for row in 0..n {
            if row != col {
                let f = m[row][col];
                if f != 0.0 {
                    for j in 0..n {
                        m[row][j] -= f * m[col][j];
                        inv[row][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    inv
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_density(rng: &mut ChaCha8Rng, grid: Grid) -> Volume {
    Volume::new(grid, random_vec(rng, grid.len(), 0.2, 1.2)).unwrap()
}

/// Low-frequency velocity stack with peak displacement `k_t * amp` voxels.
pub fn smooth_velocity(rng: &mut ChaCha8Rng, grid: Grid, m: usize, amp: f64) -> VelocityStack {
    let n = grid.len();
    let mut data = Vec::with_capacity(3 * m * n);
    for _ in 0..m {
        for _ in 0..3 {
            let phase: [f64; 3] = [rng.random::<f64>() * std::f64::consts::TAU, rng.random::<f64>() * std::f64::consts::TAU, rng.random::<f64>() * std::f64::consts::TAU];
            let freq: [f64; 3] = [rng.random_range(0.3..0.9), rng.random_range(0.3..0.9), rng.random_range(0.3..0.9)];
            for idx in 0..n {
                let c = grid.coords(idx);
                let s: f64 = (0..3).map(|a| (freq[a] * c[a] as f64 + phase[a]).sin()).sum::<f64>() / 3.0;
                data.push(amp * s);
            }
        }
    }
    VelocityStack::new(grid, m, data).unwrap()
}

pub struct Problem {
    pub cfg: RomtConfig,
    pub state: SolverState,
}

pub fn random_problem(seed: u64, dims: [usize; 3], m: usize, amp: f64) -> Problem {
    let mut r = rng(seed);
    let grid = Grid::new(dims).unwrap();
    let cfg = RomtConfig {
        m,
        ..RomtConfig::default()
    };
    let rho0 = random_density(&mut r, grid);
    let rho1 = random_density(&mut r, grid);
    let v = smooth_velocity(&mut r, grid, m, amp);
    let diffusion = Arc::new(DiffusionContext::new(grid, cfg.sigma, cfg.k_t).unwrap());
    let state = SolverState::new(rho0, rho1, v, &cfg, diffusion).unwrap();
    Problem { cfg, state }
}

/// Blocks `J^k_{v_j}` (n x 3n), assembled densely by explicit products of
/// `L^{-1}`, `S(v_i)` and `B(rho_j)`; `blocks[k-1][j]`, zero for `j >= k`.
pub fn dense_jacobian_blocks(state: &SolverState) -> Vec<Vec<Dense>> {
    let n = state.grid().len();
    let m = state.config().m;
    let l_inv = inverse(&state.diffusion().operator().to_dense());
    let s: Vec<Dense> = state.cache().s.iter().map(|s| s.to_sparse().to_dense()).collect();
    let b: Vec<Dense> = state.cache().b.iter().map(|b| b.to_sparse().to_dense()).collect();
    let ls: Vec<Dense> = s.iter().map(|s| matmul(&l_inv, s)).collect();
    let mut blocks = vec![vec![zeros(n, 3 * n); m]; m];
    for k in 1..=m {
        for j in 0..k {
            let mut acc = matmul(&l_inv, &b[j]);
            for l in &ls[j + 1..k] {
                acc = matmul(l, &acc);
            }
            blocks[k - 1][j] = acc;
        }
    }
    blocks
}

/// Row block `J_k` as an `n x 3mn` matrix.
pub fn dense_row_block(blocks: &[Vec<Dense>], k: usize) -> Dense {
    let row = &blocks[k - 1];
    let n = row[0].len();
    (0..n)
        .map(|r| row.iter().flat_map(|blk| blk[r].iter().copied()).collect())
        .collect()
}
