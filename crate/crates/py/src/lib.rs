//! Python bindings for the forecasting library: series loading, the
//! normalizer, windowing, the model zoo and the training/benchmark entry
//! points.

use forecast_core::data::{self, HORIZON, LOOKBACK};
use forecast_core::error::Error;
use forecast_core::model::{self, ModelName};
use forecast_core::optim::OptimizerKind;
use forecast_core::tensor::Tensor;
use forecast_core::train::{self, TrainConfig};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use std::path::PathBuf;
use std::str::FromStr;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A loaded daily series.
#[pyclass(name = "Series")]
struct PySeries {
    inner: data::TimeSeries,
}

#[pymethods]
impl PySeries {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    #[getter]
    fn dates(&self) -> Vec<String> {
        self.inner.dates().iter().map(|d| d.to_string()).collect()
    }

    #[getter]
    fn volumes(&self) -> Option<Vec<f64>> {
        self.inner.volumes().map(|v| v.to_vec())
    }

    /// Contiguous 70/15/15 train/validation/test split.
    fn split(&self) -> PyResult<(PySeries, PySeries, PySeries)> {
        let (a, b, c) = data::chronological_split(&self.inner).map_err(to_py)?;
        Ok((
            PySeries { inner: a },
            PySeries { inner: b },
            PySeries { inner: c },
        ))
    }
}

/// Loads a `date,close[,volume]` CSV file.
#[pyfunction]
fn load_series(path: PathBuf) -> PyResult<PySeries> {
    Ok(PySeries {
        inner: data::load_series(&path).map_err(to_py)?,
    })
}

/// Min-max rescaler fitted on training extrema.
#[pyclass(name = "Normalizer")]
struct PyNormalizer {
    inner: data::Normalizer,
}

#[pymethods]
impl PyNormalizer {
    #[staticmethod]
    fn fit(values: Vec<f64>) -> PyResult<PyNormalizer> {
        Ok(PyNormalizer {
            inner: data::Normalizer::fit(&values).map_err(to_py)?,
        })
    }

    #[getter]
    fn min(&self) -> f64 {
        self.inner.min()
    }

    #[getter]
    fn max(&self) -> f64 {
        self.inner.max()
    }

    fn apply(&self, x: f64) -> f64 {
        self.inner.apply(x)
    }

    fn invert(&self, y: f64) -> f64 {
        self.inner.invert(y)
    }

    fn apply_all(&self, xs: Vec<f64>) -> Vec<f64> {
        self.inner.apply_all(&xs)
    }
}

/// Lookback windows paired with next-step targets.
#[pyclass(name = "Windows")]
struct PyWindows {
    inner: data::WindowedDataset,
}

#[pymethods]
impl PyWindows {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Each window as a flat list of `lookback` values.
    #[getter]
    fn inputs(&self) -> Vec<Vec<f64>> {
        let t = self.inner.inputs();
        let (n, lb) = (t.shape()[0], t.shape()[1]);
        (0..n)
            .map(|i| (0..lb).map(|j| t.at3(i, j, 0)).collect())
            .collect()
    }

    #[getter]
    fn targets(&self) -> Vec<f64> {
        self.inner.targets().data().to_vec()
    }

    #[getter]
    fn origins(&self) -> Vec<usize> {
        self.inner.origins().to_vec()
    }
}

/// Builds all (window, next value) samples from a normalized value list.
#[pyfunction]
#[pyo3(signature = (values, lookback = LOOKBACK, horizon = HORIZON))]
fn make_windows(values: Vec<f64>, lookback: usize, horizon: usize) -> PyResult<PyWindows> {
    Ok(PyWindows {
        inner: data::make_windows(&values, lookback, horizon).map_err(to_py)?,
    })
}

fn windows_to_tensor(windows: &[Vec<f64>]) -> PyResult<Tensor> {
    if windows.is_empty() {
        return Err(PyValueError::new_err("no windows given"));
    }
    let lb = windows[0].len();
    if windows.iter().any(|w| w.len() != lb) {
        return Err(PyValueError::new_err("windows have uneven lengths"));
    }
    let data: Vec<f64> = windows.iter().flatten().copied().collect();
    Tensor::new(&[windows.len(), lb, 1], data).map_err(to_py)
}

/// One architecture from the zoo, instantiated with seeded weights.
#[pyclass(name = "Model")]
struct PyModel {
    inner: model::Model,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (name, seed = 42))]
    fn new(name: &str, seed: u64) -> PyResult<Self> {
        let name = ModelName::from_str(name).map_err(to_py)?;
        Ok(PyModel {
            inner: model::build_model(name, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Predicts one value per window; each window is a flat list of 14
    /// normalized values.
    fn predict(&self, windows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let batch = windows_to_tensor(&windows)?;
        Ok(self.inner.predict(&batch).map_err(to_py)?.into_data())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::save_model(&self.inner, &path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<PyModel> {
        Ok(PyModel {
            inner: model::load_model(&path).map_err(to_py)?,
        })
    }
}

/// Mean absolute error between two equal-length lists.
#[pyfunction]
fn mae(pred: Vec<f64>, actual: Vec<f64>) -> PyResult<f64> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(PyValueError::new_err(format!(
            "mae needs equal non-empty lists, got {} and {}",
            pred.len(),
            actual.len()
        )));
    }
    let a = Tensor::new(&[pred.len(), 1], pred).map_err(to_py)?;
    let b = Tensor::new(&[actual.len(), 1], actual).map_err(to_py)?;
    train::mae(&a, &b).map_err(to_py)
}

/// Outcome of one (model, optimizer) pipeline run.
#[pyclass(name = "RunResult")]
struct PyRunResult {
    #[pyo3(get)]
    model: String,
    #[pyo3(get)]
    optimizer: String,
    #[pyo3(get)]
    val_mae: Option<f64>,
    #[pyo3(get)]
    test_mae: Option<f64>,
    #[pyo3(get)]
    epochs: usize,
    #[pyo3(get)]
    stopped_early: Option<bool>,
    #[pyo3(get)]
    error: Option<String>,
    /// (epoch, train_mae, val_mae) triples from the initial run.
    #[pyo3(get)]
    history: Vec<(usize, f64, f64)>,
    /// Normalized-scale test predictions in order.
    #[pyo3(get)]
    predictions: Option<Vec<f64>>,
    #[pyo3(get)]
    actuals: Option<Vec<f64>>,
}

fn outcome_to_result(outcome: train::CellOutcome) -> PyRunResult {
    PyRunResult {
        model: outcome.report.model.to_string(),
        optimizer: outcome.report.optimizer.to_string(),
        val_mae: outcome.report.val_mae,
        test_mae: outcome.report.test_mae,
        epochs: outcome.report.epochs,
        stopped_early: outcome.history.as_ref().map(|h| h.stopped_early),
        error: outcome.report.error,
        history: outcome
            .history
            .map(|h| {
                h.records
                    .iter()
                    .map(|r| (r.epoch, r.train_mae, r.val_mae))
                    .collect()
            })
            .unwrap_or_default(),
        predictions: outcome.test_predictions,
        actuals: outcome.test_actuals,
    }
}

fn config_from(batch_size: usize, patience: usize, max_epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size,
        patience,
        max_epochs,
        seed,
        ..TrainConfig::new(forecast_core::optim::OptimizerConfig::sgd())
    }
}

/// Full pipeline for one cell: split, normalize, window, train with early
/// stopping, retrain on train+validation, score the test set.
#[pyfunction]
#[pyo3(signature = (data_path, model, optimizer, batch_size = 32, patience = 10, max_epochs = 500, seed = 42))]
fn run_experiment(
    py: Python<'_>,
    data_path: PathBuf,
    model: &str,
    optimizer: &str,
    batch_size: usize,
    patience: usize,
    max_epochs: usize,
    seed: u64,
) -> PyResult<PyRunResult> {
    let name = ModelName::from_str(model).map_err(to_py)?;
    let kind = OptimizerKind::from_str(optimizer).map_err(to_py)?;
    let cfg = config_from(batch_size, patience, max_epochs, seed);
    py.detach(move || {
        let series = data::load_series(&data_path).map_err(to_py)?;
        let prepared = train::prepare(&series).map_err(to_py)?;
        let outcome = train::run_cell(name, kind, &prepared, &prepared.test, &cfg);
        Ok(outcome_to_result(outcome))
    })
}

/// Sweeps models x optimizers and returns one result per cell, in order.
#[pyfunction]
#[pyo3(signature = (data_path, models = None, optimizers = None, batch_size = 32, patience = 10, max_epochs = 500, seed = 42, parallel = 0))]
#[allow(clippy::too_many_arguments)]
fn run_grid(
    py: Python<'_>,
    data_path: PathBuf,
    models: Option<Vec<String>>,
    optimizers: Option<Vec<String>>,
    batch_size: usize,
    patience: usize,
    max_epochs: usize,
    seed: u64,
    parallel: usize,
) -> PyResult<Vec<PyRunResult>> {
    let models: Vec<ModelName> = match models {
        Some(list) => list
            .iter()
            .map(|s| ModelName::from_str(s).map_err(to_py))
            .collect::<PyResult<_>>()?,
        None => ModelName::all().to_vec(),
    };
    let optimizers: Vec<OptimizerKind> = match optimizers {
        Some(list) => list
            .iter()
            .map(|s| OptimizerKind::from_str(s).map_err(to_py))
            .collect::<PyResult<_>>()?,
        None => OptimizerKind::all().to_vec(),
    };
    let cfg = config_from(batch_size, patience, max_epochs, seed);
    py.detach(move || {
        let series = data::load_series(&data_path).map_err(to_py)?;
        let outcomes = train::run_experiment_grid(&series, &models, &optimizers, &cfg, parallel)
            .map_err(to_py)?;
        Ok(outcomes.into_iter().map(outcome_to_result).collect())
    })
}

#[pyfunction]
fn version() -> &'static str {
    forecast_core::VERSION
}

#[pymodule]
fn forecast_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySeries>()?;
    m.add_class::<PyNormalizer>()?;
    m.add_class::<PyWindows>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(load_series, m)?)?;
    m.add_function(wrap_pyfunction!(make_windows, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_grid, m)?)?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add("LOOKBACK", LOOKBACK)?;
    m.add("HORIZON", HORIZON)?;
    Ok(())
}
