use nalgebra::DMatrix;
use nashseek::config::{self, ConfigSources, RunConfig};
use nashseek::control;
use nashseek::graph::{EdgeSpec, GraphSpec};
use nashseek::verify::{self, VerifyOptions};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(nashseek_py, ConfigError, PyValueError, "Invalid configuration, graph or gains.");
create_exception!(nashseek_py, NumericError, PyRuntimeError, "Divergence, singular system or solver failure.");

fn to_py(e: nashseek::Error) -> PyErr {
    use nashseek::Error as E;
    match e {
        E::ConfigInvalid(_)
        | E::InvalidGraph(_)
        | E::NotStronglyConnected
        | E::DimensionMismatch { .. }
        | E::NotHurwitz
        | E::EmptyGains => ConfigError::new_err(e.to_string()),
        _ => NumericError::new_err(e.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Weighted digraph; `edges` are one-based `(to, from, weight)` triples.
#[pyclass(name = "Digraph", module = "nashseek_py")]
struct PyDigraph {
    inner: nashseek::Digraph,
}

#[pymethods]
impl PyDigraph {
    #[new]
    fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        let spec = GraphSpec { n, edges: edges.into_iter().map(|(to, from, w)| EdgeSpec { to, from, w }).collect() };
        nashseek::Digraph::from_spec(&spec).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Scenario default graph: `"vehicles"` or `"turbines"`.
    #[staticmethod]
    fn scenario_default(name: &str) -> PyResult<Self> {
        let cfg = resolve(name, None, Vec::new(), None)?;
        let model = config::build_scenario(&cfg).map_err(to_py)?;
        Ok(Self { inner: model.graph })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n_nodes()
    }

    fn laplacian(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.laplacian())
    }

    fn is_strongly_connected(&self) -> bool {
        self.inner.is_strongly_connected()
    }

    fn is_weight_balanced(&self) -> bool {
        self.inner.is_weight_balanced()
    }

    fn lemma1_certificate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let cert = self.inner.lemma1_certificate().map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("strongly_connected", cert.strongly_connected)?;
        d.set_item("weight_balanced", cert.weight_balanced)?;
        d.set_item("lemma1_min_eig", cert.lemma1_min_eig)?;
        d.set_item("lyapunov_residual", cert.lyapunov_residual)?;
        d.set_item("q_positive_definite", cert.q_positive_definite)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Digraph(n={}, edges={})", self.inner.n_nodes(), self.inner.to_spec().edges.len())
    }
}

/// Seeking gains; `k` has `n − 1` entries for an order-`n` chain.
#[pyclass(name = "GainSet", module = "nashseek_py")]
struct PyGainSet {
    inner: nashseek::GainSet,
}

#[pymethods]
impl PyGainSet {
    #[new]
    fn new(k: Vec<f64>, epsilon: f64, alpha1: f64, alpha2: f64, alpha3: f64) -> PyResult<Self> {
        nashseek::GainSet::new(k, epsilon, alpha1, alpha2, alpha3).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Binomial `k` for order `n`.
    #[staticmethod]
    fn auto(n: usize, epsilon: f64, alpha1: f64, alpha2: f64, alpha3: f64) -> PyResult<Self> {
        nashseek::GainSet::with_default_k(n, epsilon, alpha1, alpha2, alpha3)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[getter]
    fn k(&self) -> Vec<f64> {
        self.inner.k.clone()
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    /// `(passes, warning)` for `ε^{n−1} < α₂ < α₁ < ε^n`.
    fn check_ordering(&self) -> (bool, Option<String>) {
        let o = self.inner.check_ordering();
        (o.passes(), o.warning)
    }

    /// `P` with `P·A + Aᵀ·P = −I` for the companion matrix of `k`.
    fn lyapunov_p(&self) -> PyResult<Vec<Vec<f64>>> {
        let a = control::companion_matrix(&self.inner.k).map_err(to_py)?;
        control::lyapunov_p(&a).map(|p| rows(&p)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let g = &self.inner;
        format!(
            "GainSet(k={:?}, epsilon={}, alpha1={}, alpha2={}, alpha3={})",
            g.k, g.epsilon, g.alpha1, g.alpha2, g.alpha3
        )
    }
}

fn resolve(scenario: &str, algo: Option<String>, overrides: Vec<String>, seed: Option<u64>) -> PyResult<RunConfig> {
    config::resolve(&ConfigSources {
        scenario: Some(scenario.to_string()),
        algo,
        seed,
        sets: overrides,
        ..Default::default()
    })
    .map_err(to_py)
}

/// A resolved run configuration for one scenario.
#[pyclass(name = "Simulation", module = "nashseek_py")]
struct PySimulation {
    config: RunConfig,
}

#[pymethods]
impl PySimulation {
    #[new]
    #[pyo3(signature = (scenario, algo=None, overrides=Vec::new(), seed=None))]
    fn new(scenario: &str, algo: Option<String>, overrides: Vec<String>, seed: Option<u64>) -> PyResult<Self> {
        Ok(Self { config: resolve(scenario, algo, overrides, seed)? })
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.config.to_json())
    }

    /// Nash profile from the scenario oracle.
    fn nash(&self) -> PyResult<Vec<f64>> {
        Ok(config::build_scenario(&self.config).map_err(to_py)?.x_star)
    }

    /// Closed-loop RHS norm at the equilibrium tuple.
    fn equilibrium_residual(&self) -> PyResult<f64> {
        let run = config::prepare(&self.config).map_err(to_py)?;
        let cl = run.closed_loop().map_err(to_py)?;
        cl.equilibrium_residual(&run.model.x_star).map_err(to_py)
    }

    /// Integrates and returns `{"summary", "times", "decisions", "error_norms",
    /// "est_disagreement"}`; trajectory keys are absent after divergence.
    fn run<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let config = self.config.clone();
        let outcome = py
            .detach(move || config::run_config(&config))
            .map_err(to_py)?;
        let d = PyDict::new(py);
        let summary = serde_json::to_value(&outcome.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        d.set_item("summary", json_to_py(py, &summary)?)?;
        d.set_item("settled", outcome.settled())?;
        if let Some(traj) = outcome.trajectory {
            d.set_item("times", traj.times)?;
            d.set_item("decisions", traj.decisions)?;
            d.set_item("error_norms", traj.error_norms)?;
            d.set_item("est_disagreement", traj.estimate_disagreement)?;
        }
        Ok(d)
    }
}

/// Runs the property battery; returns one dict per check.
#[pyfunction]
#[pyo3(signature = (only=Vec::new()))]
fn verify_checks<'py>(py: Python<'py>, only: Vec<String>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let checks = verify::run_checks(&VerifyOptions::default(), &only).map_err(to_py)?;
    checks
        .into_iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("group", c.group)?;
            d.set_item("name", c.name)?;
            d.set_item("passed", c.passed)?;
            d.set_item("advisory", c.advisory)?;
            d.set_item("detail", c.detail)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
fn routh_hurwitz_stable(coeffs: Vec<f64>) -> bool {
    control::routh_hurwitz_stable(&coeffs)
}

#[pymodule]
fn nashseek_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDigraph>()?;
    m.add_class::<PyGainSet>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(verify_checks, m)?)?;
    m.add_function(wrap_pyfunction!(routh_hurwitz_stable, m)?)?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("NumericError", m.py().get_type::<NumericError>())?;
    Ok(())
}
