//! Python bindings. Structured results cross the boundary as plain
//! dicts and lists; trajectories are wrapped in [`PyTrajectory`].

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use aest::control::{self, PulseShape, DEFAULT_CONDITION_TOL};
use aest::engine::{self, EvolutionSpec, Trajectory};
use aest::lab::{self, Scenario, ScenarioName};
use aest::lattice::{self, CouplingProfile};
use aest::{Error, C64};

fn err(e: Error) -> PyErr {
    match e.exit_code() {
        4 => PyOSError::new_err(e.to_string()),
        3 => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn json_value(obj: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    from_py(obj)
}

fn shape(name: &str, intensity: f64, tau: f64) -> PyResult<PulseShape> {
    match name {
        "rect" | "rectangular" => Ok(PulseShape::rectangular(intensity, tau)),
        "sine" => Ok(PulseShape::sine(intensity, std::f64::consts::PI / tau)),
        "bb" | "bang_bang" => Ok(PulseShape::bang_bang(intensity, tau)),
        other => Err(PyValueError::new_err(format!("unknown pulse shape {other:?}"))),
    }
}

/// Sampled evolution returned by [`evolve`].
#[pyclass(name = "Trajectory", module = "aest", frozen)]
struct PyTrajectory {
    inner: Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn fidelity(&self) -> Vec<f64> {
        self.inner.fidelity.clone()
    }

    #[getter]
    fn leakage(&self) -> Vec<f64> {
        self.inner.leakage.clone()
    }

    #[getter]
    fn norm_drift(&self) -> Vec<f64> {
        self.inner.norm_drift.clone()
    }

    #[getter]
    fn final_state(&self) -> Vec<C64> {
        self.inner.final_state.iter().copied().collect()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps
    }

    fn final_fidelity(&self) -> f64 {
        self.inner.final_fidelity()
    }

    fn max_fidelity(&self) -> f64 {
        self.inner.max_fidelity()
    }

    fn max_norm_drift(&self) -> f64 {
        self.inner.max_norm_drift()
    }

    fn __len__(&self) -> usize {
        self.inner.times.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(samples={}, steps={}, final_fidelity={:.6})",
            self.inner.times.len(),
            self.inner.steps,
            self.inner.final_fidelity()
        )
    }
}

/// Bond couplings of a chain: `kind` is "uniform", "pst" or "weak_ends".
#[pyfunction]
#[pyo3(signature = (kind, n, j = 1.0, j0 = None))]
fn couplings(kind: &str, n: usize, j: f64, j0: Option<f64>) -> PyResult<Vec<f64>> {
    let profile = match (kind, j0) {
        ("uniform", _) => CouplingProfile::Uniform { j },
        ("pst", _) => CouplingProfile::Pst,
        ("weak_ends", Some(j0)) => CouplingProfile::WeakEnds { j, j0 },
        ("weak_ends", None) => return Err(PyValueError::new_err("weak_ends needs j0")),
        (other, _) => return Err(PyValueError::new_err(format!("unknown profile {other:?}"))),
    };
    lattice::couplings(&profile, n).map_err(err)
}

#[pyfunction]
fn bessel_j0(x: f64) -> f64 {
    control::bessel_j0(x)
}

#[pyfunction]
fn bessel_j0_zero(k: usize) -> PyResult<f64> {
    control::bessel_j0_zero(k).map_err(err)
}

/// `(satisfied, m)` for a rectangular pulse.
#[pyfunction]
fn rect_condition(intensity: f64, tau: f64) -> (bool, u64) {
    control::rect_condition(intensity, tau)
}

/// Condition report of a pulse as a dict.
#[pyfunction]
#[pyo3(signature = (shape_name, intensity, tau, window = None, tol = DEFAULT_CONDITION_TOL))]
fn condition_residual<'py>(
    py: Python<'py>,
    shape_name: &str,
    intensity: f64,
    tau: f64,
    window: Option<f64>,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let pulse = shape(shape_name, intensity, tau)?;
    let rep = control::condition_residual_with_tol(&pulse, window.unwrap_or(tau), 64, tol).map_err(err)?;
    to_py(py, &rep)
}

/// Sine pulse whose half period sits on the `k`-th zero of `J₀`.
#[pyfunction]
fn sine_for_zero<'py>(py: Python<'py>, intensity: f64, k: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &control::sine_for_zero(intensity, k).map_err(err)?)
}

/// Evolves a spec given as a dict with `EvolutionSpec` field names.
#[pyfunction]
fn evolve(py: Python<'_>, spec: &Bound<'_, PyAny>) -> PyResult<PyTrajectory> {
    let spec: EvolutionSpec = from_py(spec)?;
    let inner = py.detach(|| engine::evolve(&spec)).map_err(err)?;
    Ok(PyTrajectory { inner })
}

#[pyfunction]
fn fidelity(state: Vec<C64>, target: usize) -> PyResult<f64> {
    if target == 0 || target > state.len() {
        return Err(PyValueError::new_err(format!("target {target} outside 1..={}", state.len())));
    }
    Ok(engine::fidelity(&lattice::State::from_vec(state), target))
}

/// `(t, F)` of the uncontrolled uniform chain's best transfer.
#[pyfunction]
#[pyo3(signature = (n, window = None))]
fn bose_baseline(py: Python<'_>, n: usize, window: Option<f64>) -> PyResult<(f64, f64)> {
    let w = window.unwrap_or_else(|| lab::bose_window(n));
    py.detach(|| engine::bose_baseline(n, w)).map_err(err)
}

/// Resolved preset plan as a dict.
#[pyfunction]
#[pyo3(signature = (name, n = None))]
fn preset<'py>(py: Python<'py>, name: &str, n: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
    let name: ScenarioName = name.parse().map_err(err)?;
    let lengths = n.map(|n| vec![n]);
    let plan = py.detach(|| lab::preset_for(name, lengths.as_deref())).map_err(err)?;
    to_py(py, &plan)
}

/// Runs a scenario into `out` and returns its record as a dict.
#[pyfunction]
#[pyo3(signature = (name, out, n = None, config = None, parallel = true))]
fn run<'py>(
    py: Python<'py>,
    name: &str,
    out: PathBuf,
    n: Option<usize>,
    config: Option<&Bound<'py, PyAny>>,
    parallel: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let name: ScenarioName = name.parse().map_err(err)?;
    let mut sc = match config {
        Some(c) => Scenario::from_config(name, &json_value(c)?).map_err(err)?,
        None => Scenario::named(name),
    };
    if let Some(n) = n {
        sc = sc.with_chain_length(n);
    }
    let rec = py.detach(|| lab::run_with(&sc, &out, parallel)).map_err(err)?;
    to_py(py, &rec)
}

/// Calibration result as a dict, including the grid sweep.
#[pyfunction]
fn calibrate_j0<'py>(py: Python<'py>, n: usize, total_time: f64) -> PyResult<Bound<'py, PyAny>> {
    let cal = py.detach(|| lab::calibrate_j0(n, total_time)).map_err(err)?;
    let out = to_py(py, &cal)?;
    out.set_item("sweep", cal.sweep)?;
    Ok(out)
}

#[pyfunction]
fn find_peaks<'py>(py: Python<'py>, values: Vec<f64>, fidelities: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    if values.len() != fidelities.len() {
        return Err(PyValueError::new_err("values and fidelities differ in length"));
    }
    let data: Vec<(f64, f64)> = values.into_iter().zip(fidelities).collect();
    to_py(py, &lab::find_peaks(&data))
}

#[pyfunction]
fn read_sweep_csv(path: PathBuf) -> PyResult<Vec<(f64, f64)>> {
    lab::read_sweep_csv(&path).map_err(err)
}

#[pymodule]
fn _aest(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", lab::CODE_VERSION)?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(couplings, m)?)?;
    m.add_function(wrap_pyfunction!(bessel_j0, m)?)?;
    m.add_function(wrap_pyfunction!(bessel_j0_zero, m)?)?;
    m.add_function(wrap_pyfunction!(rect_condition, m)?)?;
    m.add_function(wrap_pyfunction!(condition_residual, m)?)?;
    m.add_function(wrap_pyfunction!(sine_for_zero, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(bose_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_j0, m)?)?;
    m.add_function(wrap_pyfunction!(find_peaks, m)?)?;
    m.add_function(wrap_pyfunction!(read_sweep_csv, m)?)?;
    Ok(())
}
