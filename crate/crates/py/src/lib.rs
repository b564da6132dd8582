//! Python bindings: configure an experiment, simulate click logs, train the
//! estimators and evaluate them.

use std::collections::HashMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use cld_rank::clicksim::ClickLog;
use cld_rank::dataset::{parse_letor, Dataset, Split};
use cld_rank::estimators::{train_method, Method, TrainedModel};
use cld_rank::harness::{self, ExperimentConfig, Fig2Config};
use cld_rank::metrics::{self, MetricsReport};
use cld_rank::models::Checkpoint;
use cld_rank::numerics;

fn py_err(e: cld_rank::Error) -> PyErr {
    match e {
        cld_rank::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn report_dict(r: &MetricsReport) -> HashMap<String, f64> {
    HashMap::from([
        ("ndcg_at_1".to_string(), r.ndcg_at_1),
        ("ndcg_at_3".to_string(), r.ndcg_at_3),
        ("map".to_string(), r.map),
        ("n_queries".to_string(), r.n_queries as f64),
    ])
}

/// Experiment configuration. Keys are those of the `key = value` config file.
#[pyclass(name = "ExperimentConfig", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let inner = match text {
            Some(t) => ExperimentConfig::parse(t).map_err(py_err)?,
            None => ExperimentConfig::default(),
        };
        Ok(PyConfig { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[getter]
    fn methods(&self) -> Vec<String> {
        self.inner.methods.iter().map(|m| m.to_string()).collect()
    }
}

/// A learning-to-rank dataset.
#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (text, test = false))]
    fn from_letor(text: &str, test: bool) -> PyResult<Self> {
        let split = if test { Split::Test } else { Split::Train };
        Ok(PyDataset { inner: parse_letor(text.as_bytes(), split).map_err(py_err)? })
    }

    fn to_letor(&self) -> String {
        self.inner.to_letor()
    }

    #[getter]
    fn n_queries(&self) -> usize {
        self.inner.groups.len()
    }

    #[getter]
    fn n_docs(&self) -> usize {
        self.inner.n_docs()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim
    }

    /// Feature rows and binary labels of query `index`.
    fn query(&self, index: usize) -> PyResult<(Vec<Vec<f64>>, Vec<u8>)> {
        let g = self.inner.groups.get(index).ok_or_else(|| PyValueError::new_err(format!("no query {index}")))?;
        Ok((g.docs.iter().map(|d| d.features.clone()).collect(), g.labels()))
    }
}

/// A simulated click log.
#[pyclass(name = "ClickLog", from_py_object)]
#[derive(Clone)]
struct PyClickLog {
    inner: ClickLog,
}

#[pymethods]
impl PyClickLog {
    #[getter]
    fn n_sessions(&self) -> usize {
        self.inner.n_sessions()
    }

    #[getter]
    fn n_records(&self) -> usize {
        self.inner.records.len()
    }

    #[getter]
    fn n_clicks(&self) -> usize {
        self.inner.records.iter().filter(|r| r.clicked).count()
    }

    fn to_csv(&self, dataset: &PyDataset) -> String {
        self.inner.to_csv(&dataset.inner)
    }
}

/// A trained ranker.
#[pyclass(name = "Model")]
struct PyModel {
    inner: TrainedModel,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn method(&self) -> String {
        self.inner.method().to_string()
    }

    #[getter]
    fn trace(&self) -> Vec<f64> {
        self.inner.trace().to_vec()
    }

    /// Ranking scores of feature rows. Not defined for rank aggregation,
    /// which only produces orderings.
    fn score(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        match &self.inner {
            TrainedModel::Single(r) => rows.iter().map(|x| r.score(x)).collect::<cld_rank::Result<_>>().map_err(py_err),
            TrainedModel::Agg(_) => Err(PyValueError::new_err("rank aggregation has no pointwise score")),
        }
    }

    #[pyo3(signature = (dataset, graded = false))]
    fn evaluate(&self, dataset: &PyDataset, graded: bool) -> PyResult<HashMap<String, f64>> {
        let r = metrics::evaluate(&self.inner, &dataset.inner, graded).map_err(py_err)?;
        Ok(report_dict(&r))
    }

    fn to_checkpoint(&self) -> String {
        self.inner.to_checkpoint().to_text()
    }

    #[staticmethod]
    fn from_checkpoint(text: &str) -> PyResult<Self> {
        let ck = Checkpoint::parse(text).map_err(py_err)?;
        Ok(PyModel { inner: TrainedModel::from_checkpoint(&ck).map_err(py_err)? })
    }
}

/// Standardized (train, test) splits of the configured dataset.
#[pyfunction]
fn load_datasets(config: &PyConfig) -> PyResult<(PyDataset, PyDataset)> {
    let (train, test) = harness::load_datasets(&config.inner).map_err(py_err)?;
    Ok((PyDataset { inner: train }, PyDataset { inner: test }))
}

/// Fit the logging policy and simulate the click log of one run seed.
#[pyfunction]
fn simulate(config: &PyConfig, train: &PyDataset, seed: u64) -> PyResult<PyClickLog> {
    let (_, log) = harness::simulate_for_seed(&config.inner, &train.inner, seed).map_err(py_err)?;
    Ok(PyClickLog { inner: log })
}

#[pyfunction]
fn train(method: &str, log: &PyClickLog, train: &PyDataset, config: &PyConfig, seed: u64) -> PyResult<PyModel> {
    let method: Method = method.parse().map_err(py_err)?;
    let tc = harness::train_config_for_seed(&config.inner, method, seed);
    Ok(PyModel { inner: train_method(method, &log.inner, &train.inner, &tc).map_err(py_err)? })
}

/// Every configured (method, seed) cell, as the rows of the results CSV.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &PyConfig) -> PyResult<String> {
    let cfg = config.inner.clone();
    let results = py.detach(|| harness::run_experiment(&cfg)).map_err(py_err)?;
    Ok(harness::results_csv(&results))
}

/// Fitted (name, slope, intercept) lines of the one-dimensional bias study.
#[pyfunction]
#[pyo3(signature = (n_points = 2000, eta = 1.0, top_k = 3, noise_sd = 0.3, seed = 7))]
fn fig2_study(n_points: usize, eta: f64, top_k: usize, noise_sd: f64, seed: u64) -> PyResult<Vec<(String, f64, f64)>> {
    let cfg = Fig2Config { n_points, eta, top_k, noise_sd, seed, ..Fig2Config::default() };
    let fits = harness::fig2_study(&cfg).map_err(py_err)?;
    Ok(fits.into_iter().map(|f| (f.name.to_string(), f.slope, f.intercept)).collect())
}

#[pyfunction]
fn phi_cdf(z: f64) -> f64 {
    numerics::phi_cdf(z)
}

#[pyfunction]
fn log_phi_cdf(z: f64) -> f64 {
    numerics::log_phi_cdf(z)
}

#[pyfunction]
fn inverse_mills(z: f64) -> f64 {
    numerics::inverse_mills(z)
}

#[pyfunction]
fn ndcg_at_k(ranked_labels: Vec<u8>, k: usize) -> f64 {
    metrics::ndcg_at_k(&ranked_labels, k)
}

#[pyfunction]
fn average_precision(ranked_labels: Vec<u8>) -> PyResult<f64> {
    metrics::average_precision(&ranked_labels).map_err(py_err)
}

#[pymodule]
fn cld_rank_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyClickLog>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(load_datasets, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(fig2_study, m)?)?;
    m.add_function(wrap_pyfunction!(phi_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(log_phi_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_mills, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    Ok(())
}
