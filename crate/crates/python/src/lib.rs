//! Python module `plap`: grids, fields, configs and the analysis stages.
//!
//! Field values cross the boundary as flat lists in storage order (last
//! axis fastest), the same order as the binary dumps.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use plap_core::config::{ExperimentConfig, GridSection};
use plap_core::geometry::{check_parallelism, compute_geometry, fit_omega, verify_identity_sz, GeometryOptions};
use plap_core::grid::{Grid as CoreGrid, ScalarField};
use plap_core::poincare::{energy_growth as core_energy_growth, phi_suite, verify_poincare as core_verify_poincare, PoincareOptions};
use plap_core::stability::min_rayleigh_with_tolerance;

fn py_err(e: plap_core::Error) -> PyErr {
    match e {
        plap_core::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Tensor-product grid over `x` (first `m` axes) and `y` (the rest).
#[pyclass(frozen, skip_from_py_object, module = "plap")]
#[derive(Clone)]
struct Grid(CoreGrid);

#[pymethods]
impl Grid {
    #[new]
    fn new(m: usize, n_minus_m: usize, sizes: Vec<usize>, extents: Vec<(f64, f64)>) -> PyResult<Self> {
        CoreGrid::new(m, n_minus_m, &sizes, &extents).map(Grid).map_err(py_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn sizes(&self) -> Vec<usize> {
        self.0.sizes().to_vec()
    }

    #[getter]
    fn extents(&self) -> Vec<(f64, f64)> {
        self.0.extents()
    }

    #[getter]
    fn spacings(&self) -> Vec<f64> {
        self.0.spacings().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        plap_core::io::header_line(&self.0)
    }
}

/// Scalar field on a grid.
#[pyclass(skip_from_py_object, module = "plap")]
#[derive(Clone)]
struct Field(ScalarField);

#[pymethods]
impl Field {
    #[new]
    fn new(grid: &Grid, values: Vec<f64>) -> PyResult<Self> {
        ScalarField::from_values(&grid.0, values).map(Field).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        plap_core::io::load_field(&path).map(Field).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        plap_core::io::save_field(&self.0, &path).map_err(py_err)
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        plap_core::io::save_field_csv(&self.0, &path).map_err(py_err)
    }

    #[getter]
    fn grid(&self) -> Grid {
        Grid(self.0.grid().clone())
    }

    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn max_abs_diff(&self, other: &Field) -> PyResult<f64> {
        self.0.max_abs_diff(&other.0).map_err(py_err)
    }
}

/// Experiment configuration in the sectioned `key = value` format.
#[pyclass(skip_from_py_object, module = "plap")]
#[derive(Clone)]
struct Config(ExperimentConfig);

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (text=None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        match text {
            Some(t) => ExperimentConfig::parse(t).map(Config).map_err(py_err),
            None => Ok(Config(ExperimentConfig::default())),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ExperimentConfig::load(&path).map(Config).map_err(py_err)
    }

    fn emit(&self) -> String {
        self.0.emit()
    }

    fn grid(&self) -> PyResult<Grid> {
        self.0.build_grid().map(Grid).map_err(py_err)
    }

    /// The closed-form field of an example or counterexample config.
    fn exact(&self) -> PyResult<Option<Field>> {
        Ok(self.0.build().map_err(py_err)?.exact.map(Field))
    }

    fn __repr__(&self) -> String {
        self.0.emit()
    }
}

/// `cfg` rebuilt on the grid of `u`.
fn on_grid_of(cfg: &Config, u: &Field) -> ExperimentConfig {
    let g = u.0.grid();
    let mut c = cfg.0.clone();
    c.grid = GridSection { m: g.m(), n_minus_m: g.n_minus_m(), sizes: g.sizes().to_vec(), extents: g.extents() };
    c
}

fn geometry_options(cfg: &ExperimentConfig) -> GeometryOptions {
    GeometryOptions { theta_rel: cfg.tolerance.theta_grad, ..GeometryOptions::default() }
}

/// Minimizes the energy of `config`; returns the field and a report dict.
#[pyfunction]
fn solve<'py>(py: Python<'py>, config: &Config) -> PyResult<(Field, Bound<'py, PyDict>)> {
    let ex = config.0.build().map_err(py_err)?;
    let (u, report) = plap_core::solver::solve(&ex.model, &ex.boundary, None, &config.0.solver).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("converged", report.converged)?;
    d.set_item("iterations", report.iterations)?;
    d.set_item("final_residual_norm", report.final_residual_norm)?;
    d.set_item("energy_trace", report.energy_trace)?;
    Ok((Field(u), d))
}

/// Smallest eigenvalue of the second variation at `u`.
#[pyfunction]
fn stability<'py>(py: Python<'py>, u: &Field, config: &Config) -> PyResult<Bound<'py, PyDict>> {
    let cfg = on_grid_of(config, u);
    let ex = cfg.build().map_err(py_err)?;
    let r = min_rayleigh_with_tolerance(&u.0, &ex.model, cfg.tolerance.eig_tol, cfg.tolerance.tol_stability).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("min_rayleigh", r.min_rayleigh)?;
    d.set_item("eigen_iterations", r.eigen_iterations)?;
    d.set_item("residual", r.residual_of_eigenpair)?;
    d.set_item("converged", r.converged)?;
    d.set_item("tol_stability", r.tol_stability)?;
    d.set_item("stable", r.is_stable())?;
    d.set_item("monotone_axis", r.monotone_direction_found)?;
    Ok(d)
}

/// S, T, U, K^2 and the region mask as fields, plus the scalar checks.
#[pyfunction]
fn geometry<'py>(py: Python<'py>, u: &Field, config: &Config) -> PyResult<Bound<'py, PyDict>> {
    let cfg = on_grid_of(config, u);
    let opts = geometry_options(&cfg);
    let geo = compute_geometry(&u.0, &opts).map_err(py_err)?;
    let identity = verify_identity_sz(&geo);
    let par = check_parallelism(&u.0, &opts).map_err(py_err)?;
    let fit = fit_omega(&u.0, &opts).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("S", Field(geo.s.clone()))?;
    d.set_item("T", Field(geo.t.clone()))?;
    d.set_item("U", Field(geo.u.clone()))?;
    d.set_item("Ksq", Field(geo.ksq.clone()))?;
    d.set_item("mask", Field(plap_core::pipeline::mask_field(&geo.region_mask)))?;
    d.set_item("theta_grad", geo.theta_grad)?;
    d.set_item("identity_defect", identity.max_relative)?;
    d.set_item("parallel", par.verdict)?;
    d.set_item("omega_constancy_score", fit.constancy_score)?;
    Ok(d)
}

/// One dict per test function: lhs, rhs, slack, hypothesis_ok, holds.
#[pyfunction]
#[pyo3(signature = (u, config, phis=None))]
fn verify_poincare<'py>(py: Python<'py>, u: &Field, config: &Config, phis: Option<&str>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = on_grid_of(config, u);
    let ex = cfg.build().map_err(py_err)?;
    let stab = min_rayleigh_with_tolerance(&u.0, &ex.model, cfg.tolerance.eig_tol, cfg.tolerance.tol_stability).map_err(py_err)?;
    let suite = phi_suite(u.0.grid(), phis.unwrap_or(&cfg.poincare.phis), cfg.poincare.seed).map_err(py_err)?;
    let opts = PoincareOptions { geometry: geometry_options(&cfg), tol_poincare: cfg.tolerance.tol_poincare, tol_poincare_h: 0.0 };
    let reports = core_verify_poincare(&u.0, &ex.model, &suite, &stab, &opts).map_err(py_err)?;
    reports
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("phi", r.phi_descriptor)?;
            d.set_item("lhs", r.lhs)?;
            d.set_item("rhs", r.rhs)?;
            d.set_item("slack", r.slack)?;
            d.set_item("hypothesis_ok", r.hypothesis_ok)?;
            d.set_item("holds", r.holds)?;
            Ok(d)
        })
        .collect()
}

/// Energies in balls of the given radii and the fitted exponent.
#[pyfunction]
fn energy_growth<'py>(py: Python<'py>, u: &Field, config: &Config, radii: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = on_grid_of(config, u);
    let ex = cfg.build().map_err(py_err)?;
    let g = core_energy_growth(&u.0, &ex.model, &radii, cfg.growth.bound).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("radii", g.radii)?;
    d.set_item("energies", g.energies)?;
    d.set_item("fitted_slope", g.fitted_slope)?;
    d.set_item("bound_exponent", g.bound_exponent)?;
    d.set_item("within_bound", g.within_bound)?;
    Ok(d)
}

/// `(check, pass, value, threshold)`
type AcceptanceRow = (String, bool, String, String);

/// Runs every stage into `out_dir`; returns the exit code and the
/// acceptance rows.
#[pyfunction]
fn run_pipeline(config: &Config, out_dir: PathBuf) -> PyResult<(i32, Vec<AcceptanceRow>)> {
    let outcome = plap_core::pipeline::run_pipeline(&config.0, &out_dir).map_err(py_err)?;
    let rows = outcome.rows.into_iter().map(|r| (r.check.name().to_string(), r.pass, r.value, r.threshold)).collect();
    Ok((outcome.exit.code(), rows))
}

#[pymodule]
fn plap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Grid>()?;
    m.add_class::<Field>()?;
    m.add_class::<Config>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(stability, m)?)?;
    m.add_function(wrap_pyfunction!(geometry, m)?)?;
    m.add_function(wrap_pyfunction!(verify_poincare, m)?)?;
    m.add_function(wrap_pyfunction!(energy_growth, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
