//! Python bindings: volumes, solver configuration, pair and series solves,
//! sphere synthesis and Lagrangian post-processing.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use romt_core::io::{gen_gaussian_spheres, load_volume, save_volume, SphereSynthConfig};
use romt_core::lagrangian::{analyze_series, LagrangianConfig, LagrangianOutput};
use romt_core::solver::{gauss_newton as gn, run_series_with_workers, worker_count_from_env};
use romt_core::{Grid, PairResult, RomtConfig, RomtError, Volume};

fn py_err(e: RomtError) -> PyErr {
    match e {
        RomtError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Volume", module = "romt", skip_from_py_object)]
#[derive(Clone)]
pub struct PyVolume {
    inner: Volume,
}

#[pymethods]
impl PyVolume {
    /// `data` is x-fastest with `dims[0] * dims[1] * dims[2]` entries.
    #[new]
    #[pyo3(signature = (dims, data, spacing = 1.0))]
    fn new(dims: [usize; 3], data: Vec<f64>, spacing: f64) -> PyResult<Self> {
        let grid = Grid::with_spacing(dims, spacing, spacing.powi(3)).map_err(py_err)?;
        Ok(Self {
            inner: Volume::new(grid, data).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_volume(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_volume(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        let [a, b, c] = self.inner.grid().dims();
        (a, b, c)
    }

    #[getter]
    fn spacing(&self) -> f64 {
        self.inner.grid().spacing()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn get(&self, i: usize, j: usize, k: usize) -> PyResult<f64> {
        let idx = self.inner.grid().linear_index(i, j, k).map_err(py_err)?;
        Ok(self.inner.data()[idx])
    }

    fn total_mass(&self) -> f64 {
        self.inner.total_mass()
    }

    fn max(&self) -> f64 {
        self.inner.max()
    }

    fn __len__(&self) -> usize {
        self.inner.data().len()
    }

    fn __repr__(&self) -> String {
        format!("Volume(dims={:?}, mass={:.6e})", self.inner.grid().dims(), self.inner.total_mass())
    }
}

#[pyclass(name = "RomtConfig", module = "romt", skip_from_py_object)]
#[derive(Clone)]
pub struct PyRomtConfig {
    inner: RomtConfig,
}

#[pymethods]
impl PyRomtConfig {
    /// Keyword arguments override the defaults, e.g. `RomtConfig(m=4, sigma=0.5)`.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut map = serde_json::Map::new();
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                let value = if let Ok(b) = v.extract::<bool>() {
                    serde_json::Value::from(b)
                } else if let Ok(i) = v.extract::<i64>() {
                    serde_json::Value::from(i)
                } else if let Ok(f) = v.extract::<f64>() {
                    serde_json::Value::from(f)
                } else {
                    serde_json::Value::from(v.extract::<String>()?)
                };
                map.insert(key, value);
            }
        }
        Self::from_value(serde_json::Value::Object(map))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let value = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Self::from_value(value)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("config serializes")
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    #[getter]
    fn k_t(&self) -> f64 {
        self.inner.k_t
    }

    #[getter]
    fn max_gn_iters(&self) -> usize {
        self.inner.max_gn_iters
    }

    fn __repr__(&self) -> String {
        format!("RomtConfig({})", self.to_json())
    }
}

impl PyRomtConfig {
    fn from_value(value: serde_json::Value) -> PyResult<Self> {
        let inner: RomtConfig = serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }
}

#[pyclass(name = "PairResult", module = "romt")]
pub struct PyPairResult {
    inner: PairResult,
}

#[pymethods]
impl PyPairResult {
    /// `(energy, fit)` at the initial guess and after every accepted step.
    #[getter]
    fn cost_history(&self) -> Vec<(f64, f64)> {
        self.inner.cost_history.iter().map(|c| (c.energy, c.fit)).collect()
    }

    #[getter]
    fn stop_reason(&self) -> &'static str {
        match self.inner.stop_reason {
            romt_core::StopReason::MaxIters => "max_iters",
            romt_core::StopReason::LineSearchFailure => "line_search_failure",
        }
    }

    #[getter]
    fn gn_iterations(&self) -> usize {
        self.inner.gn_iterations
    }

    #[getter]
    fn pcg_iterations(&self) -> usize {
        self.inner.pcg_iterations
    }

    /// Velocity stack, interval-major, each interval component-blocked.
    #[getter]
    fn velocity(&self) -> Vec<f64> {
        self.inner.v_final.data().to_vec()
    }

    #[getter]
    fn interpolations(&self) -> Vec<PyVolume> {
        self.inner.rho_interp.iter().map(|v| PyVolume { inner: v.clone() }).collect()
    }

    fn final_image(&self) -> PyVolume {
        PyVolume {
            inner: self.inner.final_image().clone(),
        }
    }
}

#[pyclass(name = "Lagrangian", module = "romt")]
pub struct PyLagrangian {
    inner: LagrangianOutput,
}

#[pymethods]
impl PyLagrangian {
    /// Point lists in voxel coordinates.
    #[getter]
    fn pathlines(&self) -> Vec<Vec<[f64; 3]>> {
        self.inner.pathlines.iter().map(|l| l.points.clone()).collect()
    }

    #[getter]
    fn speeds(&self) -> Vec<Vec<f64>> {
        self.inner.pathlines.iter().map(|l| l.speeds.clone()).collect()
    }

    #[getter]
    fn peclets(&self) -> Vec<Vec<f64>> {
        self.inner.pathlines.iter().map(|l| l.peclets.clone()).collect()
    }

    /// `(start, end, length)` per retained flux vector.
    #[getter]
    fn flux_vectors(&self) -> Vec<([f64; 3], [f64; 3], f64)> {
        self.inner.glyphs.flux_vectors.iter().map(|f| (f.start, f.end, f.length)).collect()
    }

    #[getter]
    fn speed_map(&self) -> PyVolume {
        PyVolume {
            inner: self.inner.glyphs.speed_map.clone(),
        }
    }

    #[getter]
    fn pe_map(&self) -> PyVolume {
        PyVolume {
            inner: self.inner.glyphs.pe_map.clone(),
        }
    }
}

/// Drifting, spreading Gaussian spheres on a `round(50 * scale)^3` grid.
#[pyfunction]
#[pyo3(signature = (scale = 1.0, frames = 5))]
fn synth_spheres(scale: f64, frames: usize) -> PyResult<Vec<PyVolume>> {
    let cfg = SphereSynthConfig {
        frames,
        ..SphereSynthConfig::scaled(scale).map_err(py_err)?
    };
    Ok(gen_gaussian_spheres(&cfg)
        .map_err(py_err)?
        .into_iter()
        .map(|inner| PyVolume { inner })
        .collect())
}

#[pyfunction]
#[pyo3(signature = (rho0, rho1, config = None))]
fn gauss_newton(
    py: Python<'_>,
    rho0: PyRef<'_, PyVolume>,
    rho1: PyRef<'_, PyVolume>,
    config: Option<PyRef<'_, PyRomtConfig>>,
) -> PyResult<PyPairResult> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let (a, b) = (rho0.inner.clone(), rho1.inner.clone());
    let inner = py.detach(move || gn(&a, &b, &cfg)).map_err(py_err)?;
    Ok(PyPairResult { inner })
}

#[pyfunction]
#[pyo3(signature = (volumes, config = None, workers = None))]
fn run_series(
    py: Python<'_>,
    volumes: Vec<PyRef<'_, PyVolume>>,
    config: Option<PyRef<'_, PyRomtConfig>>,
    workers: Option<usize>,
) -> PyResult<Vec<PyPairResult>> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let vols: Vec<Volume> = volumes.iter().map(|v| v.inner.clone()).collect();
    let workers = workers.unwrap_or_else(worker_count_from_env);
    let results = py
        .detach(move || run_series_with_workers(&vols, &cfg, workers, None))
        .map_err(py_err)?;
    Ok(results.into_iter().map(|inner| PyPairResult { inner }).collect())
}

/// Pathlines, speed and Péclet maps, and flux vectors for a solved series.
#[pyfunction]
#[pyo3(signature = (results, config = None, threshold_fraction = 0.1, stride = 1, n_sub = 1))]
fn analyze(
    results: Vec<PyRef<'_, PyPairResult>>,
    config: Option<PyRef<'_, PyRomtConfig>>,
    threshold_fraction: f64,
    stride: usize,
    n_sub: usize,
) -> PyResult<PyLagrangian> {
    let romt = config.map(|c| c.inner.clone()).unwrap_or_default();
    let pairs: Vec<PairResult> = results.iter().map(|r| r.inner.clone()).collect();
    let cfg = LagrangianConfig {
        threshold_fraction,
        stride,
        n_sub,
        ..LagrangianConfig::default()
    };
    let inner = analyze_series(&pairs, romt.sigma, romt.k_t, &cfg, None).map_err(py_err)?;
    Ok(PyLagrangian { inner })
}

#[pymodule]
fn romt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVolume>()?;
    m.add_class::<PyRomtConfig>()?;
    m.add_class::<PyPairResult>()?;
    m.add_class::<PyLagrangian>()?;
    m.add_function(wrap_pyfunction!(synth_spheres, m)?)?;
    m.add_function(wrap_pyfunction!(gauss_newton, m)?)?;
    m.add_function(wrap_pyfunction!(run_series, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    Ok(())
}
