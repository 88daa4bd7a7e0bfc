//! Synthetic drifting, spreading Gaussian spheres.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RomtError};
use crate::grid::{Grid, Volume};

/// Frame `t` is `A exp(-|x - c_t|^2 / (2 s_t^2))` with `c_t = c_0 + t * drift`
/// and `s_t = s_0 (1 + t * growth)`, in voxel units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphereSynthConfig {
    pub dims: [usize; 3],
    pub frames: usize,
    pub center: [f64; 3],
    pub drift: [f64; 3],
    pub std: f64,
    pub growth: f64,
    pub amplitude: f64,
}

impl Default for SphereSynthConfig {
    fn default() -> Self {
        Self {
            dims: [50, 50, 50],
            frames: 5,
            center: [18.5, 24.5, 24.5],
            drift: [3.0, 0.0, 0.0],
            std: 4.0,
            growth: 0.1,
            amplitude: 1.0,
        }
    }
}

impl SphereSynthConfig {
    /// The default geometry on a `round(50 * factor)`-cubed grid, with center,
    /// drift and width scaled along.
    pub fn scaled(factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(RomtError::Argument(format!("scale factor must be positive, got {factor}")));
        }
        let base = Self::default();
        let n = (50.0 * factor).round() as usize;
        let stretch = (n as f64 - 1.0) / (base.dims[0] as f64 - 1.0);
        Ok(Self {
            dims: [n; 3],
            center: base.center.map(|c| c * stretch),
            drift: base.drift.map(|d| d * stretch),
            std: base.std * stretch,
            ..base
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 8) {
            return Err(RomtError::Parameter(format!("sphere dims must be >= 8 per axis, got {:?}", self.dims)));
        }
        if self.frames < 2 {
            return Err(RomtError::Parameter(format!("need at least 2 frames, got {}", self.frames)));
        }
        if !(self.std > 0.0) {
            return Err(RomtError::Parameter(format!("std must be positive, got {}", self.std)));
        }
        if !(self.amplitude > 0.0) {
            return Err(RomtError::Parameter(format!("amplitude must be positive, got {}", self.amplitude)));
        }
        if self.frames > 1 && !(1.0 + (self.frames - 1) as f64 * self.growth > 0.0) {
            return Err(RomtError::Parameter(format!("growth {} shrinks the sphere to nothing", self.growth)));
        }
        Ok(())
    }

    pub fn center_at(&self, t: usize) -> [f64; 3] {
        std::array::from_fn(|a| self.center[a] + t as f64 * self.drift[a])
    }

    pub fn std_at(&self, t: usize) -> f64 {
        self.std * (1.0 + t as f64 * self.growth)
    }
}

/// Frames rescaled to the total mass of the first.
pub fn gen_gaussian_spheres(cfg: &SphereSynthConfig) -> Result<Vec<Volume>> {
    cfg.validate()?;
    let grid = Grid::new(cfg.dims)?;
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut mass0 = None;
    for t in 0..cfg.frames {
        let c = cfg.center_at(t);
        let s = cfg.std_at(t);
        let near_edge = (0..3).any(|a| c[a] - 3.0 * s < 0.0 || c[a] + 3.0 * s > (cfg.dims[a] - 1) as f64);
        if near_edge {
            warn!("frame {t}: sphere at {c:?} with std {s:.3} is within 3 std of the boundary");
        }
        let mut vol = Volume::from_fn(grid, |i, j, k| {
            let r2 = (i as f64 - c[0]).powi(2) + (j as f64 - c[1]).powi(2) + (k as f64 - c[2]).powi(2);
            cfg.amplitude * (-r2 / (2.0 * s * s)).exp()
        });
        let mass = vol.total_mass();
        let target = *mass0.get_or_insert(mass);
        let factor = target / mass;
        vol.data_mut().iter_mut().for_each(|x| *x *= factor);
        frames.push(vol);
    }
    Ok(frames)
}
