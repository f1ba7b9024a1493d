//! Python bindings. Reports come back as plain dicts (the same JSON the CLI
//! writes); matrices are lists of rows.

use nalgebra::{DMatrix, DVector};
use orthant_rbm::decay::{self, Normalization};
use orthant_rbm::estimator::{self, RunOptions};
use orthant_rbm::matrix;
use orthant_rbm::model::{FacetSpec, ModelFile, ModelSpec};
use orthant_rbm::pde;
use orthant_rbm::simulator::{lcp, SimConfig, Simulator};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

/// Square matrix from a list of rows.
fn rows(m: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let d = m.len();
    if m.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err(format!("expected a square matrix with {d} rows")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| m[i][j]))
}

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn normalization(name: &str) -> PyResult<Normalization> {
    match name {
        "harmonic" => Ok(Normalization::Harmonic),
        "paper" | "paper_literal" => Ok(Normalization::PaperLiteral),
        other => Err(PyValueError::new_err(format!("unknown normalization {other:?}"))),
    }
}

/// A validated model: covariance, drift, reflection matrix and optional facet.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    spec: ModelSpec,
    facet: Option<FacetSpec>,
}

impl PyModel {
    fn config(
        &self,
        start: &[f64],
        dt: Option<f64>,
        eps_abs: Option<f64>,
        escape_radius: Option<f64>,
        max_time: Option<f64>,
    ) -> PyResult<SimConfig> {
        let d = SimConfig::defaults_for(start);
        SimConfig::new(
            dt.unwrap_or(d.dt),
            eps_abs.unwrap_or(d.eps_abs),
            escape_radius.unwrap_or(d.escape_radius),
            max_time.unwrap_or(d.max_time),
        )
        .map_err(err)
    }
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (sigma, mu, reflection, facet=None))]
    fn new(sigma: Vec<Vec<f64>>, mu: Vec<f64>, reflection: Vec<Vec<f64>>, facet: Option<Vec<usize>>) -> PyResult<Self> {
        let file = ModelFile {
            dimension: mu.len(),
            sigma,
            mu,
            reflection,
            facet,
        };
        Self::from_model_file(file)
    }

    /// Loads a model JSON file.
    #[staticmethod]
    fn from_json(path: std::path::PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(err)?;
        let file: ModelFile = serde_json::from_str(&text).map_err(err)?;
        Self::from_model_file(file)
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.spec.dimension()
    }

    /// 1-based facet coordinates, or None at the apex.
    #[getter]
    fn facet(&self) -> Option<Vec<usize>> {
        self.facet.as_ref().map(FacetSpec::one_based)
    }

    /// Assumption checks and the verdict.
    fn analyze(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let c = decay::classify(&self.spec, self.facet.as_ref()).map_err(err)?;
        to_py(py, &c)
    }

    #[pyo3(signature = (normalization="harmonic"))]
    fn decay(&self, py: Python<'_>, normalization: &str) -> PyResult<Py<PyAny>> {
        let d = decay::compute_decay_vector(&self.spec, self.facet.as_ref(), self::normalization(normalization)?)
            .map_err(err)?;
        to_py(py, &d)
    }

    /// `exp(a·x)` for the decay vector with the given normalization.
    #[pyo3(signature = (x, normalization="harmonic"))]
    fn predict(&self, x: Vec<f64>, normalization: &str) -> PyResult<f64> {
        if x.len() != self.spec.dimension() {
            return Err(PyValueError::new_err("start has the wrong dimension"));
        }
        let d = decay::compute_decay_vector(&self.spec, self.facet.as_ref(), self::normalization(normalization)?)
            .map_err(err)?;
        Ok(decay::predicted_absorption(&d, &x))
    }

    #[pyo3(signature = (candidate=None, normalization="harmonic"))]
    fn pde_residuals(&self, py: Python<'_>, candidate: Option<Vec<f64>>, normalization: &str) -> PyResult<Py<PyAny>> {
        let a = match candidate {
            Some(a) => a,
            None => {
                decay::compute_decay_vector(&self.spec, None, self::normalization(normalization)?)
                    .map_err(err)?
                    .a
            }
        };
        let a = DVector::from_column_slice(&a);
        let r = pde::absorption_pde_residuals(self.spec.sigma(), self.spec.mu(), self.spec.reflection(), &a)
            .map_err(err)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (start, seed=0, index=0, dt=None, eps_abs=None, escape_radius=None, max_time=None, allow_degenerate=false))]
    #[allow(clippy::too_many_arguments)]
    fn simulate(
        &self,
        py: Python<'_>,
        start: Vec<f64>,
        seed: u64,
        index: u64,
        dt: Option<f64>,
        eps_abs: Option<f64>,
        escape_radius: Option<f64>,
        max_time: Option<f64>,
        allow_degenerate: bool,
    ) -> PyResult<Py<PyAny>> {
        let cfg = self.config(&start, dt, eps_abs, escape_radius, max_time)?;
        let sim = Simulator::new(&self.spec, self.facet.as_ref(), cfg, allow_degenerate).map_err(err)?;
        let r = py.detach(|| sim.run(&start, seed, index)).map_err(err)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (start, n=10_000, seed=0, dt=None, eps_abs=None, escape_radius=None, max_time=None, workers=None, allow_degenerate=false))]
    #[allow(clippy::too_many_arguments)]
    fn estimate(
        &self,
        py: Python<'_>,
        start: Vec<f64>,
        n: u64,
        seed: u64,
        dt: Option<f64>,
        eps_abs: Option<f64>,
        escape_radius: Option<f64>,
        max_time: Option<f64>,
        workers: Option<usize>,
        allow_degenerate: bool,
    ) -> PyResult<Py<PyAny>> {
        let cfg = self.config(&start, dt, eps_abs, escape_radius, max_time)?;
        let options = RunOptions { workers, allow_degenerate };
        let r = py
            .detach(|| estimator::estimate_absorption(&self.spec, self.facet.as_ref(), &start, n, &cfg, seed, options))
            .map_err(err)?;
        to_py(py, &r)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.spec.to_file(self.facet.as_ref()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(dimension={}, mu={:?}, facet={:?})",
            self.spec.dimension(),
            self.spec.mu().as_slice(),
            self.facet()
        )
    }
}

impl PyModel {
    fn from_model_file(file: ModelFile) -> PyResult<Self> {
        let report = orthant_rbm::model::validate_model(&file);
        if !report.valid {
            let detail = serde_json::to_string(&report.violations).unwrap_or_default();
            return Err(PyValueError::new_err(format!("invalid model: {detail}")));
        }
        let spec = ModelSpec::from_file(&file).map_err(err)?;
        let facet = match &file.facet {
            Some(f) => Some(FacetSpec::from_one_based(f, spec.dimension()).map_err(err)?),
            None => None,
        };
        Ok(Self { spec, facet })
    }
}

/// S-matrix test with its primal or dual certificate.
#[pyfunction]
fn is_s_matrix(py: Python<'_>, m: Vec<Vec<f64>>) -> PyResult<Py<PyAny>> {
    let m = rows(&m)?;
    to_py(py, &matrix::is_s_matrix(&m).map_err(err)?)
}

#[pyfunction]
fn is_completely_s(py: Python<'_>, m: Vec<Vec<f64>>) -> PyResult<Py<PyAny>> {
    let m = rows(&m)?;
    to_py(py, &matrix::is_completely_s(&m).map_err(err)?)
}

/// Positive kernel vectors of a singular reflection matrix.
#[pyfunction]
fn lemma2_certificate(py: Python<'_>, r: Vec<Vec<f64>>) -> PyResult<Py<PyAny>> {
    let r = rows(&r)?;
    to_py(py, &matrix::lemma2_certificate(&r).map_err(err)?)
}

/// One discrete Skorokhod projection of `y`.
#[pyfunction]
fn skorokhod_step(py: Python<'_>, r: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Py<PyAny>> {
    let r = rows(&r)?;
    if y.len() != r.nrows() || r.nrows() > lcp::MAX_LCP_DIM {
        return Err(PyValueError::new_err("y must match R, and d <= 20"));
    }
    to_py(py, &lcp::skorokhod_step(&r, &y))
}

#[pyfunction]
#[pyo3(signature = (successes, n, z=estimator::Z95))]
fn wilson_interval(successes: u64, n: u64, z: f64) -> PyResult<(f64, f64)> {
    if n == 0 || successes > n {
        return Err(PyValueError::new_err("need 0 <= successes <= n and n > 0"));
    }
    Ok(estimator::wilson_interval(successes, n, z))
}

/// Killed one-dimensional walk; the prediction is `exp(-2 mu x0 / sigma2)`.
#[pyfunction]
#[pyo3(signature = (sigma2, mu, x0, n=10_000, seed=0, dt=1e-3, eps_abs=1e-3, escape_radius=5.0, max_time=100.0, workers=None))]
#[allow(clippy::too_many_arguments)]
fn halfline_estimate(
    py: Python<'_>,
    sigma2: f64,
    mu: f64,
    x0: f64,
    n: u64,
    seed: u64,
    dt: f64,
    eps_abs: f64,
    escape_radius: f64,
    max_time: f64,
    workers: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let cfg = SimConfig::new(dt, eps_abs, escape_radius, max_time).map_err(err)?;
    let r = py
        .detach(|| estimator::estimate_halfline(sigma2, mu, x0, n, &cfg, seed, workers))
        .map_err(err)?;
    to_py(py, &r)
}

#[pymodule]
fn orthant_rbm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(is_s_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(is_completely_s, m)?)?;
    m.add_function(wrap_pyfunction!(lemma2_certificate, m)?)?;
    m.add_function(wrap_pyfunction!(skorokhod_step, m)?)?;
    m.add_function(wrap_pyfunction!(wilson_interval, m)?)?;
    m.add_function(wrap_pyfunction!(halfline_estimate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
