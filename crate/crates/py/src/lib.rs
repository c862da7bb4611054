//! Python bindings: scenarios, simulation, the three filters, the grid
//! oracle and the diagnostics.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pjfilter::diagnostics::{self, Check, CheckSettings};
use pjfilter::kalman_jump::run_filter;
use pjfilter::oracle_grid::run_grid_filter;
use pjfilter::particle::{self as particle, Mode, ParticleOptions};
use pjfilter::simulate::{simulate_path_id, ObservationEvent};
use pjfilter::{Error, Preset, ScenarioConfig, ValidatedScenario};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Parse(_) | Error::InvalidScenario(_) | Error::UnsupportedScenario(_) | Error::IncompatibleMethod { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// A validated scenario.
#[pyclass(name = "Scenario", module = "pjfilter_py", frozen)]
struct PyScenario {
    inner: ValidatedScenario,
}

#[pymethods]
impl PyScenario {
    /// Built-in preset: ou_kalman, medical, credit_risk, njode_style.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        let p: Preset = name.parse().map_err(err)?;
        Ok(Self { inner: ScenarioConfig::preset(p).validate().map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let c = ScenarioConfig::from_json(text).map_err(err)?;
        Ok(Self { inner: c.validate().map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn with_seed(&self, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.with(|c| c.seed = seed).map_err(err)? })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    #[getter]
    fn dims(&self) -> (usize, usize) {
        (self.inner.model().m(), self.inner.model().n())
    }

    fn report_times(&self) -> Vec<f64> {
        self.inner.report_times()
    }

    fn __repr__(&self) -> String {
        format!("Scenario(preset={:?}, seed={})", self.inner.config().preset.name(), self.inner.seed())
    }
}

/// One simulated path and its observation events.
#[pyclass(name = "Simulation", module = "pjfilter_py", frozen)]
struct PySimulation {
    times: Vec<f64>,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    events: Vec<ObservationEvent>,
}

#[pymethods]
impl PySimulation {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    /// Signal values, one list per grid point (post-jump at event rows).
    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        self.x.clone()
    }

    #[getter]
    fn y(&self) -> Vec<Vec<f64>> {
        self.y.clone()
    }

    /// `(i, T_i, dY, Y_pre)` per event.
    #[getter]
    fn events(&self) -> Vec<(usize, f64, Vec<f64>, Vec<f64>)> {
        self.events.iter().map(|e| (e.index, e.time, e.dy.clone(), e.y_pre.clone())).collect()
    }

    fn __len__(&self) -> usize {
        self.times.len()
    }
}

/// Simulates path `path_id` with `seed` (default: the scenario seed).
#[pyfunction]
#[pyo3(signature = (scenario, seed=None, path_id=0))]
fn simulate(py: Python<'_>, scenario: &PyScenario, seed: Option<u64>, path_id: u64) -> PyResult<PySimulation> {
    let sc = &scenario.inner;
    let seed = seed.unwrap_or(sc.seed());
    let sim = py.detach(|| simulate_path_id(sc, seed, path_id)).map_err(err)?;
    let p = &sim.path;
    Ok(PySimulation {
        times: p.times.clone(),
        x: (0..p.len()).map(|k| p.x_row(k).to_vec()).collect(),
        y: (0..p.len()).map(|k| p.y_row(k).to_vec()).collect(),
        events: sim.events,
    })
}

/// Exact conditional-Gaussian filter: `(t, side, mean, cov)` rows.
#[pyfunction]
fn kalman(py: Python<'_>, scenario: &PyScenario, sim: &PySimulation) -> PyResult<Vec<(f64, String, Vec<f64>, Vec<Vec<f64>>)>> {
    let traj = py.detach(|| run_filter(&scenario.inner, &sim.events)).map_err(err)?;
    Ok(traj
        .rows
        .iter()
        .map(|r| {
            let m = r.mean.len();
            let cov = (0..m).map(|i| (0..m).map(|j| r.cov[(i, j)]).collect()).collect();
            (r.t, r.side.as_str().to_string(), r.mean.iter().copied().collect(), cov)
        })
        .collect())
}

/// Particle filter, `mode` "ks" (normalized) or "zakai" (unnormalized,
/// reported through Kallianpur–Striebel). Rows are
/// `(t, side, phi_name, estimate, se, ess, log_rho1)`.
#[pyfunction]
#[pyo3(signature = (scenario, sim, mode="ks", particles=None, run=0))]
fn particle_filter(
    py: Python<'_>,
    scenario: &PyScenario,
    sim: &PySimulation,
    mode: &str,
    particles: Option<usize>,
    run: u64,
) -> PyResult<Vec<(f64, String, String, f64, f64, f64, f64)>> {
    let mode = match mode {
        "ks" => Mode::Normalized,
        "zakai" => Mode::Unnormalized,
        other => return Err(PyValueError::new_err(format!("unknown mode `{other}`; use \"ks\" or \"zakai\""))),
    };
    let sc = &scenario.inner;
    let mut opts = ParticleOptions::from_scenario(sc, mode);
    if let Some(n) = particles {
        opts.particles = n;
    }
    opts.run = run;
    let out = py.detach(|| particle::run_particle_filter(sc, &sim.events, &opts)).map_err(err)?;
    Ok(out
        .summary
        .into_iter()
        .map(|r| (r.t, r.side.as_str().to_string(), r.phi, r.estimate, r.se, r.ess, r.log_rho1))
        .collect())
}

/// Grid oracle for one-dimensional scenarios: `(t, side, mean, var)` rows.
#[pyfunction]
fn grid_filter(py: Python<'_>, scenario: &PyScenario, sim: &PySimulation) -> PyResult<Vec<(f64, String, f64, f64)>> {
    let g = py.detach(|| run_grid_filter(&scenario.inner, &sim.events, false)).map_err(err)?;
    Ok(g.rows.iter().map(|r| (r.t, r.side.as_str().to_string(), r.mean, r.var)).collect())
}

/// `ln dF/dF^i (y)` for `F = N(0, r)` and `F^i = N(pred_mean, pred_var + r)`.
#[pyfunction]
fn gamma_gaussian(pred_mean: f64, pred_var: f64, r: f64, y: f64) -> PyResult<f64> {
    particle::gamma_gaussian(pred_mean, pred_var, r, y).map_err(err)
}

/// Runs structural checks and returns one dict per report.
#[pyfunction]
#[pyo3(signature = (scenario, checks, n_paths=None, runs=None, particles=None, reference_runs=None, negative_control=false))]
#[allow(clippy::too_many_arguments)]
fn diagnose<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    checks: Vec<String>,
    n_paths: Option<usize>,
    runs: Option<usize>,
    particles: Option<usize>,
    reference_runs: Option<usize>,
    negative_control: bool,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let sc = &scenario.inner;
    let checks = checks.iter().map(|c| c.parse::<Check>()).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let mut s = CheckSettings::for_scenario(sc);
    if let Some(n) = n_paths {
        s.n_paths = n;
    }
    if let Some(r) = runs {
        s.ks_runs = r;
        s.zakai_runs = r;
        s.rho_runs = r;
    }
    if let Some(n) = particles {
        s.particles = n;
    }
    if let Some(r) = reference_runs {
        s.reference_runs = r;
    }
    s.negative_control = negative_control;
    let reports = py.detach(|| diagnostics::run_checks(sc, &checks, &s)).map_err(err)?;
    reports
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("check", &r.check)?;
            d.set_item("name", &r.name)?;
            d.set_item("statistic", r.statistic)?;
            d.set_item("se", r.se)?;
            d.set_item("rule", r.rule.describe())?;
            d.set_item("pass", r.pass)?;
            d.set_item("negative_control", r.negative_control)?;
            d.set_item("n_paths", r.n_paths)?;
            d.set_item("particles", r.particles)?;
            d.set_item("seed", r.seed)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn pjfilter_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(kalman, m)?)?;
    m.add_function(wrap_pyfunction!(particle_filter, m)?)?;
    m.add_function(wrap_pyfunction!(grid_filter, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(diagnose, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
