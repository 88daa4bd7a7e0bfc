use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RomtError {
    #[error("index ({i}, {j}, {k}) out of range for grid {dims:?}")]
    Index {
        i: usize,
        j: usize,
        k: usize,
        dims: [usize; 3],
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("diffusion solve did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    Convergence { residual: f64, iterations: usize },

    #[error("operator cache is stale: built for state {cached:#x}, current state {current:#x}")]
    CacheStale { cached: u64, current: u64 },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("unsupported format in {path}: field `{field}` {msg}")]
    UnsupportedFormat {
        path: PathBuf,
        field: &'static str,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = RomtError> = std::result::Result<T, E>;

impl RomtError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RomtError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        RomtError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
