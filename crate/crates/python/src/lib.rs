// SPDX-License-Identifier: Apache-2.0

//! Python bindings: closed-form analytics, the retry controller, and the
//! scenario runner. Reports come back as plain dicts; tables as CSV text.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use sim::analytics::{self, OverloadModel, StableLoadModel};
use sim::experiments::{self, Artifact, Params, ScenarioConfig};
use sim::guard::{self, ControllerConfig, MetricKind, Mode};
use sim::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Json(_) | Error::Domain(_) | Error::MissingBaseline(_) | Error::Index { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn overload(lam: f64, mu: f64, k: u32) -> PyResult<OverloadModel> {
    OverloadModel::new(lam, mu, k).map_err(py_err)
}

/// Rejection probability of an attempt under sustained overload (`lam > mu`).
#[pyfunction]
fn overload_rejection_prob(lam: f64, mu: f64, k: u32) -> PyResult<f64> {
    analytics::overload_rejection_prob(&overload(lam, mu, k)?).map_err(py_err)
}

/// Total offered rate, fresh plus retries, under overload.
#[pyfunction]
fn overload_offered_rate(lam: f64, mu: f64, k: u32) -> PyResult<f64> {
    analytics::overload_offered_rate(&overload(lam, mu, k)?).map_err(py_err)
}

/// Rate of attempts with index `i` (0 = fresh); `i = k` is the failed stream.
#[pyfunction]
fn retry_stage_rate(lam: f64, mu: f64, k: u32, i: u32) -> PyResult<f64> {
    analytics::retry_stage_rate(&overload(lam, mu, k)?, i).map_err(py_err)
}

/// Blocking probability of M/M/1/m with `m` counting every request in the system.
#[pyfunction]
fn mm1m_rejection_prob(rho: f64, m: u32) -> PyResult<f64> {
    analytics::mm1m_rejection_prob(&StableLoadModel { rho, m }).map_err(py_err)
}

#[pyfunction]
fn expected_backoff_delay(p_tilde: f64, k: u32) -> PyResult<f64> {
    analytics::expected_backoff_delay(p_tilde, k).map_err(py_err)
}

/// `None` at the removable singularities `p_tilde` in {0.5, 1}.
#[pyfunction]
fn expected_backoff_delay_closed_form(p_tilde: f64, k: u32) -> Option<f64> {
    analytics::expected_backoff_delay_closed_form(p_tilde, k)
}

/// `[(rho, value)]` of the normalized retry curve.
#[pyfunction]
fn normalized_retry_curve(rho_grid: Vec<f64>, k: u32, m: u32) -> PyResult<Vec<(f64, f64)>> {
    let curve = analytics::normalized_retry_curve(&rho_grid, k, m).map_err(py_err)?;
    Ok(curve.iter().map(|p| (p.rho, p.value())).collect())
}

#[pyfunction]
fn builtins() -> Vec<&'static str> {
    experiments::BUILTINS.to_vec()
}

fn artifact_dict<'py>(py: Python<'py>, artifact: &Artifact) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    let tables = PyDict::new(py);
    for t in &artifact.tables {
        tables.set_item(&t.name, t.to_csv())?;
    }
    out.set_item("tables", tables)?;
    out.set_item("summary", artifact.summary_text())?;
    let checks = PyList::empty(py);
    for c in &artifact.checks {
        let d = PyDict::new(py);
        d.set_item("name", &c.name)?;
        d.set_item("passed", c.passed)?;
        d.set_item("detail", &c.detail)?;
        checks.append(d)?;
    }
    out.set_item("checks", checks)?;
    out.set_item("provenance", artifact.provenance.to_string())?;
    Ok(out)
}

/// Runs a built-in. `params` maps keys to values as accepted by `--param`.
#[pyfunction]
#[pyo3(signature = (name, params=None, jobs=1))]
fn run_builtin<'py>(
    py: Python<'py>,
    name: &str,
    params: Option<Bound<'py, PyDict>>,
    jobs: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let mut pairs = Vec::new();
    if let Some(params) = params {
        for (k, v) in params.iter() {
            pairs.push(format!("{}={}", k.str()?, v.str()?));
        }
    }
    let params = Params::parse(&pairs).map_err(py_err)?;
    let artifact = py.detach(|| experiments::run_builtin(name, &params, jobs)).map_err(py_err)?;
    artifact_dict(py, &artifact)
}

/// Runs a scenario given as JSON text.
#[pyfunction]
#[pyo3(signature = (config_json, jobs=1))]
fn run_scenario<'py>(py: Python<'py>, config_json: &str, jobs: usize) -> PyResult<Bound<'py, PyDict>> {
    let config = ScenarioConfig::from_json(config_json).map_err(py_err)?;
    let (_, artifact) = py.detach(|| experiments::run_config(&config, jobs)).map_err(py_err)?;
    artifact_dict(py, &artifact)
}

/// Scenario config of a scenario-based built-in, as JSON text.
#[pyfunction]
fn builtin_config(name: &str) -> PyResult<String> {
    Ok(experiments::builtin_config(name, &Params::default()).map_err(py_err)?.to_json())
}

/// The rejection-based retry controller; starts OFF.
#[pyclass(name = "Controller")]
struct PyController {
    inner: guard::Controller,
}

#[pymethods]
impl PyController {
    #[new]
    #[pyo3(signature = (threshold=0.2, interval=6, metric="rejection-rate"))]
    fn new(threshold: f64, interval: u32, metric: &str) -> PyResult<Self> {
        let metric: MetricKind = serde_json::from_value(serde_json::Value::String(metric.into()))
            .map_err(|_| PyValueError::new_err(format!("unknown metric `{metric}`")))?;
        let config = ControllerConfig { metric, threshold, interval, ..ControllerConfig::default() };
        config.validate().map_err(py_err)?;
        Ok(Self { inner: guard::Controller::new(config) })
    }

    /// Feeds one measurement; returns True if retries are ON afterwards.
    fn ingest(&mut self, value: f64, now: f64) -> bool {
        self.inner.ingest(value, now) == Mode::On
    }

    #[getter]
    fn retries_on(&self) -> bool {
        self.inner.mode() == Mode::On
    }

    /// `[(time, "ON" | "OFF")]`.
    fn transitions(&self) -> Vec<(f64, &'static str)> {
        self.inner.transitions().iter().map(|t| (t.time, t.mode.as_str())).collect()
    }
}

#[pymodule]
fn stormsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", experiments::TOOL_VERSION)?;
    m.add_function(wrap_pyfunction!(overload_rejection_prob, m)?)?;
    m.add_function(wrap_pyfunction!(overload_offered_rate, m)?)?;
    m.add_function(wrap_pyfunction!(retry_stage_rate, m)?)?;
    m.add_function(wrap_pyfunction!(mm1m_rejection_prob, m)?)?;
    m.add_function(wrap_pyfunction!(expected_backoff_delay, m)?)?;
    m.add_function(wrap_pyfunction!(expected_backoff_delay_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_retry_curve, m)?)?;
    m.add_function(wrap_pyfunction!(builtins, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_builtin, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_class::<PyController>()?;
    Ok(())
}
