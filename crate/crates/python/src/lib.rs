use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use toposeg::grid::{BoundaryCondition, GridSpec};
use toposeg::hyperelastic::{RegularizerParams, SurfaceMode};
use toposeg::optimizer::{IterationRecord, SolverConfig};
use toposeg::Error;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(_) | Error::File { .. } | Error::Format { .. } => PyIOError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn parse_bc(bc: &str) -> PyResult<BoundaryCondition> {
    match bc {
        "dirichlet" => Ok(BoundaryCondition::Dirichlet),
        "natural" => Ok(BoundaryCondition::Natural),
        _ => Err(PyValueError::new_err(format!("unknown boundary condition '{bc}'"))),
    }
}

/// Uniform grid on the unit square or cube.
#[pyclass(name = "Grid", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyGrid {
    inner: GridSpec,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (dim, n, bc = "dirichlet"))]
    fn new(dim: usize, n: usize, bc: &str) -> PyResult<Self> {
        Ok(Self {
            inner: GridSpec::new(dim, n, parse_bc(bc)?).map_err(to_py)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn cell_count(&self) -> usize {
        self.inner.cell_count()
    }

    #[getter]
    fn simplex_count(&self) -> usize {
        self.inner.simplex_count()
    }

    /// Identity transformation, component-major.
    fn identity(&self) -> Vec<f64> {
        toposeg::grid::nodal_coordinates(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid(dim={}, n={}, bc='{}')",
            self.inner.dim(),
            self.inner.n(),
            match self.inner.boundary_condition() {
                BoundaryCondition::Dirichlet => "dirichlet",
                BoundaryCondition::Natural => "natural",
            }
        )
    }
}

/// Weights of the length, surface and volume terms.
#[pyclass(name = "RegularizerParams", from_py_object)]
#[derive(Clone)]
pub struct PyParams {
    inner: RegularizerParams,
}

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (alpha_l, alpha_s, alpha_v, surface = "well"))]
    fn new(alpha_l: f64, alpha_s: f64, alpha_v: f64, surface: &str) -> PyResult<Self> {
        let surface_mode = match surface {
            "well" => SurfaceMode::DoubleWell,
            "convex" => SurfaceMode::ConvexEnvelope,
            _ => return Err(PyValueError::new_err(format!("unknown surface mode '{surface}'"))),
        };
        Ok(Self {
            inner: RegularizerParams {
                alpha_l,
                alpha_s,
                alpha_v,
                surface_mode,
            },
        })
    }

    #[staticmethod]
    fn defaults(dim: usize) -> Self {
        Self {
            inner: RegularizerParams::defaults_for(dim),
        }
    }

    #[getter]
    fn alpha_l(&self) -> f64 {
        self.inner.alpha_l
    }

    #[getter]
    fn alpha_s(&self) -> f64 {
        self.inner.alpha_s
    }

    #[getter]
    fn alpha_v(&self) -> f64 {
        self.inner.alpha_v
    }

    fn __repr__(&self) -> String {
        format!(
            "RegularizerParams(alpha_l={}, alpha_s={}, alpha_v={})",
            self.inner.alpha_l, self.inner.alpha_s, self.inner.alpha_v
        )
    }
}

/// One row of the energy log.
#[pyclass(name = "IterationRecord", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
pub struct PyRecord {
    level: usize,
    iteration: usize,
    energy: f64,
    fit: f64,
    length: f64,
    surface: f64,
    volume: f64,
    grad_norm: f64,
    eta: f64,
    minres_iterations: usize,
    minres_residual: f64,
    min_det: f64,
    max_det: f64,
}

impl From<&IterationRecord> for PyRecord {
    fn from(r: &IterationRecord) -> Self {
        Self {
            level: r.level,
            iteration: r.iteration,
            energy: r.energy,
            fit: r.fit,
            length: r.length,
            surface: r.surface,
            volume: r.volume,
            grad_norm: r.grad_norm,
            eta: r.eta,
            minres_iterations: r.krylov_iterations,
            minres_residual: r.krylov_residual,
            min_det: r.min_det,
            max_det: r.max_det,
        }
    }
}

/// Outcome of [`segment`].
#[pyclass(name = "SegmentationResult", frozen, get_all)]
pub struct PySegmentation {
    mask: Vec<u32>,
    y: Vec<f64>,
    constants: Vec<f64>,
    energy: f64,
    det_range: (f64, f64),
    stop: String,
    topology_preserved: bool,
    /// label -> (prior components, mask components)
    components: BTreeMap<u32, (usize, usize)>,
    dice: BTreeMap<u32, f64>,
    records: Vec<PyRecord>,
}

fn solver_config(max_iter: Option<usize>, gamma: Option<f64>) -> SolverConfig {
    let mut cfg = SolverConfig {
        gamma,
        ..SolverConfig::default()
    };
    if let Some(m) = max_iter {
        cfg.max_outer_iter = m;
    }
    cfg
}

/// Deforms the prior `labels` onto the cell-centered `samples` and reports the result.
#[pyfunction]
#[pyo3(signature = (grid, samples, labels, params = None, levels = None, max_iter = None, gamma = None, ground_truth = None))]
#[allow(clippy::too_many_arguments)]
fn segment(
    py: Python<'_>,
    grid: &PyGrid,
    samples: Vec<f64>,
    labels: Vec<u32>,
    params: Option<PyParams>,
    levels: Option<usize>,
    max_iter: Option<usize>,
    gamma: Option<f64>,
    ground_truth: Option<Vec<u32>>,
) -> PyResult<PySegmentation> {
    let g = grid.inner;
    let params = params.map(|p| p.inner).unwrap_or_else(|| RegularizerParams::defaults_for(g.dim()));
    let config = solver_config(max_iter, gamma);
    let levels = levels.unwrap_or_else(|| toposeg::multilevel::default_levels(g.n()));
    let res = py
        .detach(|| {
            toposeg::segmenter::segment(&g, &samples, &labels, &params, &config, levels, ground_truth.as_deref())
        })
        .map_err(to_py)?;
    Ok(PySegmentation {
        topology_preserved: res.topology_preserved(),
        components: res
            .report
            .regions
            .iter()
            .map(|r| (r.label, (r.prior_components, r.mask_components)))
            .collect(),
        dice: res.report.regions.iter().filter_map(|r| r.dice.map(|d| (r.label, d))).collect(),
        records: res.run.records.iter().map(PyRecord::from).collect(),
        energy: res.run.state.total(),
        constants: res.run.state.c.clone(),
        det_range: res.det_range,
        stop: format!("{:?}", res.run.stop()),
        y: res.run.state.y,
        mask: res.mask,
    })
}

/// Minimum and maximum Jacobian determinant of the piecewise-linear map `y`.
#[pyfunction]
fn determinant_range(grid: &PyGrid, y: Vec<f64>) -> PyResult<(f64, f64)> {
    toposeg::hyperelastic::determinant_range(&grid.inner, &y).map_err(to_py)
}

/// Relative errors of analytic against central-difference gradients on a synthetic
/// problem, keyed by term.
#[pyfunction]
#[pyo3(signature = (dim, n, bc = "natural"))]
fn check_gradient(dim: usize, n: usize, bc: &str) -> PyResult<BTreeMap<String, f64>> {
    if dim == 3 && n > toposeg::gradcheck::MAX_3D_N {
        return Err(PyValueError::new_err("grid too large for a gradient check"));
    }
    let problem = toposeg::gradcheck::synthetic_problem(
        dim,
        n,
        parse_bc(bc)?,
        RegularizerParams::defaults_for(dim),
        false,
    )
    .map_err(to_py)?;
    let (y, c) = toposeg::gradcheck::perturbed_state(&problem).map_err(to_py)?;
    let report = toposeg::gradcheck::check_gradient(&problem, &y, &c, 1e-6).map_err(to_py)?;
    Ok(report.terms.iter().map(|t| (t.name.to_string(), t.rel_error)).collect())
}

/// Reads an image (`.pgm` or `.mhd`), rescaled to [0, 255]: `(dim, n, samples)`.
#[pyfunction]
fn load_image(path: PathBuf) -> PyResult<(usize, usize, Vec<f64>)> {
    let v = toposeg::io::load_image(&path).map_err(to_py)?;
    Ok((v.dim, v.n, v.data))
}

#[pyfunction]
fn load_labels(path: PathBuf) -> PyResult<(usize, usize, Vec<u32>)> {
    let v = toposeg::io::load_labels(&path).map_err(to_py)?;
    Ok((v.dim, v.n, v.data))
}

#[pyfunction]
fn write_labels(path: PathBuf, grid: &PyGrid, labels: Vec<u32>) -> PyResult<()> {
    toposeg::io::write_labels(&path, grid.inner.dim(), grid.inner.n(), &labels).map_err(to_py)
}

#[pymodule]
fn toposeg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PySegmentation>()?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(determinant_range, m)?)?;
    m.add_function(wrap_pyfunction!(check_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(load_labels, m)?)?;
    m.add_function(wrap_pyfunction!(write_labels, m)?)?;
    Ok(())
}
