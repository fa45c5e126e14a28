//! Python bindings. Reports and traces cross the boundary as JSON strings.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use qos_predict::benchmark::{self, VariantSpec};
use qos_predict::config::{Config, ExperimentConfig, PipelineConfig};
use qos_predict::data::{self, make_split, DatasetKind, QosKind};
use qos_predict::filtering::{dataset_contexts, FilterInput};
use qos_predict::hierarchy::predict_one;
use qos_predict::synthetic::SyntheticSpec;

fn to_py(e: qos_predict::Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn pipeline(config_toml: Option<&str>) -> PyResult<PipelineConfig> {
    match config_toml {
        Some(text) => Ok(Config::from_toml(text).map_err(to_py)?.pipeline),
        None => Ok(PipelineConfig::default()),
    }
}

/// A QoS dataset: one matrix (ws1) or one per time slice (ws2).
#[pyclass(frozen)]
struct Dataset {
    inner: data::Dataset,
}

#[pymethods]
impl Dataset {
    /// Loads WS-DREAM files from `root`.
    #[staticmethod]
    #[pyo3(signature = (root, dataset = "ws1", qos = "rt"))]
    fn load(root: PathBuf, dataset: &str, qos: &str) -> PyResult<Self> {
        let kind: DatasetKind = dataset.parse().map_err(to_py)?;
        let qos: QosKind = qos.parse().map_err(to_py)?;
        Ok(Self {
            inner: data::load_dataset(&root, kind, qos).map_err(to_py)?,
        })
    }

    /// A generated dataset with geographic structure.
    #[staticmethod]
    #[pyo3(signature = (n_users, n_services, seed = 0, dataset = "ws1", qos = "rt"))]
    fn synthetic(n_users: usize, n_services: usize, seed: u64, dataset: &str, qos: &str) -> PyResult<Self> {
        Ok(Self {
            inner: SyntheticSpec {
                n_users,
                n_services,
                kind: dataset.parse().map_err(to_py)?,
                qos: qos.parse().map_err(to_py)?,
                ..SyntheticSpec::default()
            }
            .generate(seed),
        })
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.n_users()
    }

    #[getter]
    fn n_services(&self) -> usize {
        self.inner.n_services()
    }

    #[getter]
    fn n_slices(&self) -> usize {
        self.inner.matrices.len()
    }

    #[getter]
    fn is_context_free(&self) -> bool {
        self.inner.is_context_free()
    }

    /// Rows of one matrix; 0 marks a missing value.
    #[pyo3(signature = (slice = 0))]
    fn matrix(&self, slice: usize) -> PyResult<Vec<Vec<f64>>> {
        let m = self
            .inner
            .matrices
            .get(slice)
            .ok_or_else(|| PyValueError::new_err(format!("no slice {slice}")))?;
        Ok(m.rows().map(<[f64]>::to_vec).collect())
    }

    fn sub_block(&self, n_users: usize, n_services: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.random_sub_block(n_users, n_services, seed).map_err(to_py)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({} {}, {} users x {} services, {} matrices)",
            self.inner.kind,
            self.inner.qos,
            self.inner.n_users(),
            self.inner.n_services(),
            self.inner.matrices.len()
        )
    }
}

/// Predicts one held-out cell and returns the trace as JSON.
#[pyfunction]
#[pyo3(signature = (dataset, user, service, density = 0.1, seed = 0, slice = 0, config_toml = None))]
fn predict(py: Python<'_>, dataset: &Dataset, user: usize, service: usize, density: f64, seed: u64, slice: usize, config_toml: Option<&str>) -> PyResult<String> {
    let config = pipeline(config_toml)?;
    let ds = &dataset.inner;
    let m = ds.matrices.get(slice).ok_or_else(|| PyValueError::new_err(format!("no slice {slice}")))?;
    let split = make_split(m, density, seed).map_err(to_py)?;
    if user >= ds.n_users() || service >= ds.n_services() || split.is_train(user, service) {
        return Err(PyValueError::new_err(format!("({user}, {service}) is not a held-out cell of this split")));
    }
    let train = split.training_matrix(m).map_err(to_py)?;
    let contexts = dataset_contexts(ds);
    let trace = py
        .detach(|| {
            let input = FilterInput::from_dataset(ds, &train, &contexts)?;
            predict_one(&input, user, service, &config, seed)
        })
        .map_err(to_py)?;
    json(&trace)
}

/// Runs one variant and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (dataset, variant = "CAHPHF", densities = vec![0.1], episodes = 1, test_k = 20, seed = 0, config_toml = None))]
fn run_experiment(
    py: Python<'_>,
    dataset: &Dataset,
    variant: &str,
    densities: Vec<f64>,
    episodes: usize,
    test_k: usize,
    seed: u64,
    config_toml: Option<&str>,
) -> PyResult<String> {
    let config = pipeline(config_toml)?;
    let variant = VariantSpec::by_name(variant).map_err(to_py)?;
    let plan = ExperimentConfig {
        densities,
        episodes,
        test_k,
        seed,
        ..ExperimentConfig::default()
    };
    let report = py
        .detach(|| benchmark::run_experiment(&dataset.inner, &variant, &plan, &config))
        .map_err(to_py)?;
    json(&report)
}

/// Names of the eighteen variants.
#[pyfunction]
fn variants() -> Vec<String> {
    VariantSpec::all().into_iter().map(|v| v.name).collect()
}

#[pyfunction]
fn mae(pairs: Vec<(f64, f64)>) -> PyResult<f64> {
    benchmark::mae(&pairs).map_err(to_py)
}

/// Percentage by which `mae1` improves on `mae2`.
#[pyfunction]
fn improvement(mae1: f64, mae2: f64) -> PyResult<f64> {
    benchmark::improvement(mae1, mae2).map_err(to_py)
}

#[pymodule]
fn qos_predict_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(variants, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(improvement, m)?)?;
    Ok(())
}
