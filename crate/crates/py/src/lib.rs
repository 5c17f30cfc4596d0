//! Python bindings: scenarios, seeded runs, experiments, the scorer and
//! ledger verification. Structured results cross over as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use uwtrust::features::{FeatureSequence, FeatureVector, FEATURE_DIM};
use uwtrust::governance::{verify_export, ExportVerdict};
use uwtrust::harness::calibration::calibrate;
use uwtrust::harness::experiment::{report as write_report, run_experiment, ModelInfo};
use uwtrust::harness::{simulate as run_one, Mode, RunOptions, ScenarioConfig};
use uwtrust::trust::model_file;
use uwtrust::world::AgentId;

fn err(e: uwtrust::Error) -> PyErr {
    match e {
        uwtrust::Error::Config(_) | uwtrust::Error::InvalidArgument(_) | uwtrust::Error::Toml(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_mode(s: &str) -> PyResult<Mode> {
    s.parse().map_err(err)
}

/// Scenario configuration with every default filled in.
#[pyclass(name = "ScenarioConfig", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[new]
    fn new() -> Self {
        PyScenario { inner: ScenarioConfig::default() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyScenario { inner: ScenarioConfig::from_toml(text).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyScenario { inner: ScenarioConfig::load(&path).map_err(err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(err)
    }

    fn intervals(&self) -> u64 {
        self.inner.intervals()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.n_agents
    }

    #[setter]
    fn set_n_agents(&mut self, v: usize) {
        self.inner.n_agents = v;
    }

    #[getter]
    fn n_auvs(&self) -> usize {
        self.inner.n_auvs
    }

    #[setter]
    fn set_n_auvs(&mut self, v: usize) {
        self.inner.n_auvs = v;
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.mode.to_string()
    }

    #[setter]
    fn set_mode(&mut self, v: &str) -> PyResult<()> {
        self.inner.mode = parse_mode(v)?;
        Ok(())
    }

    #[getter]
    fn mission_duration_s(&self) -> f64 {
        self.inner.mission_duration_s
    }

    #[setter]
    fn set_mission_duration_s(&mut self, v: f64) {
        self.inner.mission_duration_s = v;
    }

    #[getter]
    fn warmup_intervals(&self) -> u64 {
        self.inner.warmup_intervals
    }

    #[setter]
    fn set_warmup_intervals(&mut self, v: u64) {
        self.inner.warmup_intervals = v;
    }

    #[getter]
    fn adversary_fraction(&self) -> f64 {
        self.inner.adversary.fraction
    }

    #[setter]
    fn set_adversary_fraction(&mut self, v: f64) {
        self.inner.adversary.fraction = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "ScenarioConfig(n_agents={}, mode={}, mission_duration_s={})",
            self.inner.n_agents, self.inner.mode, self.inner.mission_duration_s
        )
    }
}

/// A trained trust scorer; outputs the probability that an agent is benign.
#[pyclass(name = "Scorer")]
struct PyScorer {
    inner: uwtrust::trust::Scorer<f32>,
    path: PathBuf,
}

#[pymethods]
impl PyScorer {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = model_file::load::<f32>(&path).map_err(err)?;
        Ok(PyScorer { inner, path })
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Scores one agent history, oldest interval first; each row holds the
    /// seven interval features.
    fn score(&self, history: Vec<Vec<f64>>) -> PyResult<f64> {
        let mut rows = Vec::with_capacity(history.len());
        for h in history {
            let v: [f64; FEATURE_DIM] = h
                .try_into()
                .map_err(|h: Vec<f64>| PyValueError::new_err(format!("expected {FEATURE_DIM} features, got {}", h.len())))?;
            rows.push(FeatureVector(v));
        }
        let seq = FeatureSequence::from_history(AgentId(0), &rows);
        self.inner.score(&seq).map_err(err)
    }
}

/// Feature normalization constants calibrated for a scenario.
#[pyfunction]
fn calibration<'py>(py: Python<'py>, config: &PyScenario) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &calibrate(&config.inner).map_err(err)?)
}

/// One seeded mission. Returns a dict with `stats`, per-interval `rows`,
/// the exported `ledger` blocks and per-agent `outcomes`.
#[pyfunction]
#[pyo3(signature = (config, seed, mode=None, model=None))]
fn simulate<'py>(
    py: Python<'py>,
    config: &PyScenario,
    seed: u64,
    mode: Option<&str>,
    model: Option<&PyScorer>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = config.inner.clone();
    if let Some(m) = mode {
        cfg.mode = parse_mode(m)?;
    }
    let norms = calibrate(&cfg).map_err(err)?;
    let out = run_one(&cfg, seed, norms, model.map(|m| &m.inner), &RunOptions::default()).map_err(err)?;
    let value = serde_json::json!({
        "stats": out.stats,
        "rows": out.rows,
        "ledger": out.ledger,
        "outcomes": out.outcomes,
    });
    to_py(py, &value)
}

/// Runs every mode on consecutive seeds, writes the experiment directory and
/// returns the aggregate.
#[pyfunction]
#[pyo3(signature = (config, out_dir, runs=10, modes=None, base_seed=1, model=None))]
fn experiment<'py>(
    py: Python<'py>,
    config: &PyScenario,
    out_dir: PathBuf,
    runs: usize,
    modes: Option<Vec<String>>,
    base_seed: u64,
    model: Option<&PyScorer>,
) -> PyResult<Bound<'py, PyAny>> {
    let modes = match modes {
        Some(ms) => ms.iter().map(|m| parse_mode(m)).collect::<PyResult<Vec<_>>>()?,
        None => Mode::ALL.to_vec(),
    };
    let model = match model {
        Some(m) => Some((&m.inner, ModelInfo::of_file(&m.path).map_err(err)?)),
        None => None,
    };
    let r = run_experiment(&config.inner, &modes, runs, base_seed, model, &out_dir).map_err(err)?;
    to_py(py, &r.aggregate)
}

/// Writes the per-interval mean/std table of an experiment directory and
/// returns the number of rows.
#[pyfunction]
fn report(in_dir: PathBuf, out_csv: PathBuf) -> PyResult<usize> {
    write_report(&in_dir, &out_csv).map_err(err)
}

/// Verifies a ledger export. Returns `(True, blocks)` or `(False, height)`
/// of the first tampered block.
#[pyfunction]
fn verify_ledger(path: PathBuf) -> PyResult<(bool, u64)> {
    let bytes = std::fs::read(&path).map_err(|e| PyRuntimeError::new_err(format!("{}: {e}", path.display())))?;
    Ok(match verify_export(&bytes) {
        ExportVerdict::Valid { blocks } => (true, blocks),
        ExportVerdict::Tampered { height } => (false, height),
    })
}

/// Registers the module contents; also used to embed the module in tests.
pub fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyScorer>()?;
    m.add_function(wrap_pyfunction!(calibration, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(experiment, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(verify_ledger, m)?)?;
    m.add("MODES", Mode::ALL.iter().map(|m| m.to_string()).collect::<Vec<_>>())?;
    Ok(())
}

#[pymodule]
fn pyuwtrust(m: &Bound<'_, PyModule>) -> PyResult<()> {
    init(m)
}
