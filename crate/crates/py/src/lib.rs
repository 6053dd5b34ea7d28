//! Python bindings. Configs and results cross the boundary as plain dicts, with
//! the same shape as the JSON config files and reports the CLI uses.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use prefixsim::experiment::{run_sweep, Axis, ExperimentConfig};
use prefixsim::sim::PolicyKind;
use prefixsim::timing::{self, LogNormalParams};
use prefixsim::workload::{parse_trace, write_jsonl};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (s,))
}

fn config(py: Python<'_>, cfg: Option<&Bound<'_, PyDict>>) -> PyResult<ExperimentConfig> {
    let cfg: ExperimentConfig = match cfg {
        Some(d) => {
            let s: String = py.import("json")?.call_method1("dumps", (d,))?.extract()?;
            serde_json::from_str(&s).map_err(value_err)?
        }
        None => ExperimentConfig::default(),
    };
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

/// Runs one experiment and returns the report as a dict.
///
/// `config` follows the experiment config file schema. If `trace_jsonl` is
/// given it is used as the workload instead of the config's source.
#[pyfunction]
#[pyo3(signature = (config=None, trace_jsonl=None))]
fn simulate<'py>(
    py: Python<'py>,
    config: Option<&Bound<'py, PyDict>>,
    trace_jsonl: Option<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(py, config)?;
    let report = py
        .detach(|| match trace_jsonl {
            Some(text) => {
                let trace = parse_trace("trace", text.as_bytes()).map_err(|e| e.to_string())?;
                cfg.run_on(&trace).map_err(|e| e.to_string())
            }
            None => cfg.run().map_err(|e| e.to_string()),
        })
        .map_err(PyValueError::new_err)?;
    to_py(py, &report)
}

/// Runs a parameter grid; `axes` are strings like `"policy=lru,saecache"`.
#[pyfunction]
#[pyo3(signature = (axes, config=None, jobs=1))]
fn sweep<'py>(
    py: Python<'py>,
    axes: Vec<String>,
    config: Option<&Bound<'py, PyDict>>,
    jobs: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(py, config)?;
    let axes: Vec<Axis> = axes.iter().map(|a| a.parse().map_err(value_err)).collect::<PyResult<_>>()?;
    let rows = py.detach(|| run_sweep(&cfg, &axes, jobs.max(1)).map_err(|e| e.to_string())).map_err(PyValueError::new_err)?;
    to_py(py, &rows)
}

/// Generates the configured synthetic workload as JSONL text.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn generate(py: Python<'_>, config: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    let cfg = self::config(py, config)?;
    let trace = cfg.load_trace().map_err(value_err)?;
    let mut buf = Vec::new();
    write_jsonl(&trace, &mut buf).map_err(value_err)?;
    String::from_utf8(buf).map_err(value_err)
}

/// Maximum-likelihood log-normal fit; returns `(mu, sigma)`.
#[pyfunction]
fn fit_lognormal(samples: Vec<f64>) -> PyResult<(f64, f64)> {
    let p = timing::fit_mle(&samples).map_err(value_err)?;
    Ok((p.mu, p.sigma))
}

/// Probability that a gap drawn from LogNormal(mu, sigma) exceeds `dt`.
#[pyfunction]
fn survival(dt: f64, mu: f64, sigma: f64) -> f64 {
    timing::survival(dt, &LogNormalParams::new(mu, sigma))
}

#[pyfunction]
fn policies() -> Vec<&'static str> {
    PolicyKind::ALL.iter().map(|p| p.as_str()).collect()
}

#[pymodule]
fn pyprefixsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lognormal, m)?)?;
    m.add_function(wrap_pyfunction!(survival, m)?)?;
    m.add_function(wrap_pyfunction!(policies, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
