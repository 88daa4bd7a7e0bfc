//! Raw volume files: a little-endian `f32` payload, x-fastest, with a JSON
//! sidecar of the same basename describing its shape.
//!
//! A file may hold several frames of `n` values back to back; velocity stacks
//! use `3m` frames (`[x | y | z]` per interval), interpolation stacks `m`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, RomtError};
use crate::grid::{Grid, Volume};
use crate::solver::VelocityStack;

pub const DTYPE_F32_LE: &str = "float32_le";
pub const ORDER_X_FASTEST: &str = "x_fastest";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeFileHeader {
    pub dims: [usize; 3],
    pub spacing: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxel_volume: Option<f64>,
    pub dtype: String,
    pub order: String,
    /// Hex SHA-256 of the payload.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
    #[serde(default = "one")]
    pub frames: usize,
}

fn one() -> usize {
    1
}

impl VolumeFileHeader {
    pub fn new(grid: &Grid, frames: usize) -> Self {
        let h = grid.spacing();
        Self {
            dims: grid.dims(),
            spacing: h,
            voxel_volume: (grid.voxel_volume() != h * h * h).then_some(grid.voxel_volume()),
            dtype: DTYPE_F32_LE.into(),
            order: ORDER_X_FASTEST.into(),
            checksum: None,
            frames,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        let h = self.spacing;
        Grid::with_spacing(self.dims, h, self.voxel_volume.unwrap_or(h * h * h))
    }

    pub fn payload_bytes(&self) -> usize {
        self.dims.iter().product::<usize>() * self.frames * 4
    }
}

/// Sidecar path for a payload path: same basename, `.json` suffix.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    save_frames(volume.grid(), &[volume.data()], path)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let (grid, mut frames) = load_frames(path)?;
    if frames.len() != 1 {
        return Err(RomtError::format(path, format!("expected 1 frame, header declares {}", frames.len())));
    }
    Volume::new(grid, frames.pop().expect("one frame"))
}

/// Writes `frames` (each of `grid.len()` values) into one payload.
pub fn save_frames(grid: &Grid, frames: &[&[f64]], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = grid.len();
    if frames.is_empty() {
        return Err(RomtError::Argument("nothing to save".into()));
    }
    let mut payload = Vec::with_capacity(4 * n * frames.len());
    for frame in frames {
        if frame.len() != n {
            return Err(RomtError::Argument(format!(
                "frame has {} values, grid {:?} needs {n}",
                frame.len(),
                grid.dims()
            )));
        }
        for &x in *frame {
            payload.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let mut header = VolumeFileHeader::new(grid, frames.len());
    header.checksum = Some(sha256_hex(&payload));
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(path, &payload).map_err(|e| RomtError::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, json + "\n").map_err(|e| RomtError::io(&side, e))
}

pub fn read_header(path: impl AsRef<Path>) -> Result<VolumeFileHeader> {
    let side = sidecar_path(path.as_ref());
    let text = match fs::read_to_string(&side) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(RomtError::format(&side, "missing header sidecar"));
        }
        Err(e) => return Err(RomtError::io(&side, e)),
    };
    let header: VolumeFileHeader =
        serde_json::from_str(&text).map_err(|e| RomtError::format(&side, format!("bad header: {e}")))?;
    if header.dtype != DTYPE_F32_LE {
        return Err(RomtError::UnsupportedFormat {
            path: side,
            field: "dtype",
            msg: format!("`{}` (only {DTYPE_F32_LE})", header.dtype),
        });
    }
    if header.order != ORDER_X_FASTEST {
        return Err(RomtError::UnsupportedFormat {
            path: side,
            field: "order",
            msg: format!("`{}` (only {ORDER_X_FASTEST})", header.order),
        });
    }
    if header.frames == 0 {
        return Err(RomtError::format(&side, "frames must be at least 1"));
    }
    Ok(header)
}

pub fn load_frames(path: impl AsRef<Path>) -> Result<(Grid, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let header = read_header(path)?;
    let grid = header.grid().map_err(|e| RomtError::format(sidecar_path(path), e.to_string()))?;
    let payload = fs::read(path).map_err(|e| RomtError::io(path, e))?;
    let expected = header.payload_bytes();
    if payload.len() != expected {
        return Err(RomtError::format(
            path,
            format!(
                "payload is {} bytes, header dims {:?} x {} frames need {expected}",
                payload.len(),
                header.dims,
                header.frames
            ),
        ));
    }
    if let Some(sum) = &header.checksum {
        let actual = sha256_hex(&payload);
        if !actual.eq_ignore_ascii_case(sum) {
            return Err(RomtError::format(path, format!("checksum mismatch: header {sum}, payload {actual}")));
        }
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let frames = values.chunks_exact(grid.len()).map(<[f64]>::to_vec).collect();
    Ok((grid, frames))
}

pub fn save_velocity_stack(v: &VelocityStack, path: impl AsRef<Path>) -> Result<()> {
    let frames: Vec<&[f64]> = v.data().chunks_exact(v.grid().len()).collect();
    save_frames(v.grid(), &frames, path)
}

pub fn load_velocity_stack(path: impl AsRef<Path>) -> Result<VelocityStack> {
    let path = path.as_ref();
    let (grid, frames) = load_frames(path)?;
    if frames.len() % 3 != 0 {
        return Err(RomtError::format(
            path,
            format!("{} frames is not a whole number of vector fields", frames.len()),
        ));
    }
    VelocityStack::new(grid, frames.len() / 3, frames.concat())
}

pub fn save_volume_stack(volumes: &[Volume], path: impl AsRef<Path>) -> Result<()> {
    let first = volumes
        .first()
        .ok_or_else(|| RomtError::Argument("nothing to save".into()))?;
    if volumes.iter().any(|v| !v.grid().same_shape(first.grid())) {
        return Err(RomtError::Argument("stacked volumes live on different grids".into()));
    }
    let frames: Vec<&[f64]> = volumes.iter().map(Volume::data).collect();
    save_frames(first.grid(), &frames, path)
}

pub fn load_volume_stack(path: impl AsRef<Path>) -> Result<Vec<Volume>> {
    let (grid, frames) = load_frames(path)?;
    frames.into_iter().map(|f| Volume::new(grid, f)).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
