//! Pathline exports: flat CSV and legacy ASCII VTK polydata.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RomtError};
use crate::lagrangian::Pathline;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathlineFormat {
    Csv,
    VtkAscii,
}

impl PathlineFormat {
    pub fn extension(self) -> &'static str {
        match self {
            PathlineFormat::Csv => "csv",
            PathlineFormat::VtkAscii => "vtk",
        }
    }
}

/// Nine significant digits, enough to recover any `f32` exactly.
pub(crate) fn fmt_value(x: f64) -> String {
    format!("{x:.8e}")
}

/// Writes `pathlines` with their attached speed and Péclet samples.
///
/// VTK readers do not parse infinities, so infinite Péclet samples (zero
/// diffusion) are written as `f64::MAX` there; the CSV keeps `inf`.
pub fn export_pathlines(pathlines: &[Pathline], path: impl AsRef<Path>, format: PathlineFormat) -> Result<()> {
    let path = path.as_ref();
    if pathlines.is_empty() {
        return Err(RomtError::Argument("no pathlines to export".into()));
    }
    for (id, line) in pathlines.iter().enumerate() {
        if line.speeds.len() != line.points.len() || line.peclets.len() != line.points.len() {
            return Err(RomtError::Argument(format!("pathline {id} has no attached speed/Péclet values")));
        }
    }
    let file = File::create(path).map_err(|e| RomtError::io(path, e))?;
    let res = match format {
        PathlineFormat::Csv => write_csv(pathlines, file),
        PathlineFormat::VtkAscii => write_vtk(pathlines, BufWriter::new(file)),
    };
    res.map_err(|e| RomtError::io(path, e))
}

fn write_csv(pathlines: &[Pathline], file: File) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["line_id", "point_idx", "x", "y", "z", "speed", "peclet"])?;
    for (id, line) in pathlines.iter().enumerate() {
        for (p, pt) in line.points.iter().enumerate() {
            w.write_record([
                id.to_string(),
                p.to_string(),
                fmt_value(pt[0]),
                fmt_value(pt[1]),
                fmt_value(pt[2]),
                fmt_value(line.speeds[p]),
                fmt_value(line.peclets[p]),
            ])?;
        }
    }
    w.flush()
}

fn write_vtk(pathlines: &[Pathline], mut w: impl Write) -> std::io::Result<()> {
    let total: usize = pathlines.iter().map(|l| l.points.len()).sum();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "romt pathlines")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET POLYDATA")?;
    writeln!(w, "POINTS {total} double")?;
    for line in pathlines {
        for p in &line.points {
            writeln!(w, "{} {} {}", fmt_value(p[0]), fmt_value(p[1]), fmt_value(p[2]))?;
        }
    }
    writeln!(w, "LINES {} {}", pathlines.len(), total + pathlines.len())?;
    let mut next = 0;
    for line in pathlines {
        write!(w, "{}", line.points.len())?;
        for _ in &line.points {
            write!(w, " {next}")?;
            next += 1;
        }
        writeln!(w)?;
    }
    writeln!(w, "POINT_DATA {total}")?;
    for (name, pick) in [("speed", 0), ("peclet", 1)] {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for line in pathlines {
            let values = if pick == 0 { &line.speeds } else { &line.peclets };
            for v in values {
                let v = if v.is_infinite() { f64::MAX.copysign(*v) } else { *v };
                writeln!(w, "{}", fmt_value(v))?;
            }
        }
    }
    w.flush()
}
