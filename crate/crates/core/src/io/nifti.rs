//! Import of uncompressed single-file NIfTI-1 volumes.

use std::fs;
use std::path::Path;

use log::warn;

use crate::error::{Result, RomtError};
use crate::grid::{Grid, Volume};

const HEADER_SIZE: usize = 348;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

/// Reads a little-endian `.nii` file holding a 3D `float32` or `int16` image.
///
/// Stored values are mapped through `scl_slope * x + scl_inter` whenever the
/// slope is nonzero. Spacing comes from `pixdim[1]`; the grid is isotropic, so
/// differing `pixdim[2..3]` only produce a warning.
pub fn import_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| RomtError::io(path, e))?;
    let unsupported = |field, msg: String| RomtError::UnsupportedFormat {
        path: path.to_path_buf(),
        field,
        msg,
    };
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return Err(unsupported("compression", "gzip-compressed files are not supported".into()));
    }
    if bytes.len() < HEADER_SIZE {
        return Err(RomtError::format(
            path,
            format!("file is {} bytes, shorter than the {HEADER_SIZE}-byte header", bytes.len()),
        ));
    }
    let i16_at = |off: usize| i16::from_le_bytes([bytes[off], bytes[off + 1]]);
    let f32_at = |off: usize| f32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]);

    let sizeof_hdr = i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            return Err(unsupported("sizeof_hdr", "big-endian files are not supported".into()));
        }
        return Err(RomtError::format(path, format!("sizeof_hdr is {sizeof_hdr}, expected {HEADER_SIZE}")));
    }
    if &bytes[344..348] != b"n+1\0" {
        return Err(RomtError::format(
            path,
            format!("magic {:?} is not single-file NIfTI-1 \"n+1\\0\"", &bytes[344..348]),
        ));
    }

    let ndim = i16_at(40);
    let dim: Vec<i16> = (1..=7).map(|d| i16_at(40 + 2 * d)).collect();
    if !(3..=7).contains(&ndim) || dim[3..ndim as usize].iter().any(|&d| d != 1) {
        return Err(unsupported("dim", format!("only 3D images are supported, got dim = {ndim} {dim:?}")));
    }
    if dim[..3].iter().any(|&d| d < 2) {
        return Err(RomtError::format(path, format!("spatial dims {:?} must all be >= 2", &dim[..3])));
    }
    let dims = [dim[0] as usize, dim[1] as usize, dim[2] as usize];

    let datatype = i16_at(70);
    let bitpix = i16_at(72);
    let width = match datatype {
        DT_FLOAT32 => 4,
        DT_INT16 => 2,
        other => {
            return Err(unsupported("datatype", format!("code {other} (supported: 16 float32, 4 int16)")));
        }
    };
    if bitpix as usize != 8 * width {
        return Err(RomtError::format(path, format!("bitpix {bitpix} disagrees with datatype {datatype}")));
    }

    let pixdim = [f32_at(80), f32_at(84), f32_at(88)];
    let spacing = if pixdim[0] > 0.0 { pixdim[0] as f64 } else { 1.0 };
    if pixdim.iter().any(|&p| p > 0.0 && (p as f64 - spacing).abs() > 1e-6 * spacing) {
        warn!("{}: anisotropic pixdim {pixdim:?}, using {spacing}", path.display());
    }

    let vox_offset = f32_at(108);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(RomtError::format(path, format!("vox_offset {vox_offset} is invalid")));
    }
    let start = vox_offset as usize;
    let n = dims.iter().product::<usize>();
    let end = start + n * width;
    if bytes.len() < end {
        return Err(RomtError::format(
            path,
            format!("payload needs {} bytes from offset {start}, file has {}", n * width, bytes.len() - start.min(bytes.len())),
        ));
    }

    let slope = f32_at(112) as f64;
    let inter = f32_at(116) as f64;
    let scale = |x: f64| if slope != 0.0 && slope.is_finite() { slope * x + inter } else { x };
    let payload = &bytes[start..end];
    let data: Vec<f64> = match datatype {
        DT_FLOAT32 => payload
            .chunks_exact(4)
            .map(|b| scale(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect(),
        _ => payload
            .chunks_exact(2)
            .map(|b| scale(i16::from_le_bytes([b[0], b[1]]) as f64))
            .collect(),
    };
    // NIfTI already stores x fastest, matching the internal layout.
    let grid = Grid::with_spacing(dims, spacing, spacing.powi(3))?;
    Volume::new(grid, data)
}
