//! Python bindings: the evaluation metrics, the parameter count and a
//! loaded classifier that labels raw IMU windows.

use gesturewire::baseline;
use gesturewire::eval::{self, ConfusionMatrix, RatingSheet};
use gesturewire::model::{self, ModelConfig};
use gesturewire::serve::Classifier;
use gesturewire::signal::{normalize, Window, CHANNELS};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Trainable parameters of the `paper` or `desk` configuration.
#[pyfunction]
#[pyo3(signature = (config = "paper", n_classes = 5))]
fn param_count(config: &str, n_classes: usize) -> PyResult<usize> {
    let cfg = match config {
        "paper" => ModelConfig::paper(n_classes),
        "desk" => ModelConfig::desk(n_classes),
        other => return Err(value_err(format!("unknown config `{other}`"))),
    };
    cfg.validate().map_err(value_err)?;
    Ok(model::param_count(&cfg))
}

/// Gwet's AC1 of a rating sheet given as JSON text.
#[pyfunction]
fn gwet_ac1(sheet_json: &str) -> PyResult<f64> {
    let sheet = RatingSheet::from_json(sheet_json).map_err(value_err)?;
    eval::gwet_ac1(&sheet).map_err(value_err)
}

/// Share of non-idle predictions a majority of raters marked correct.
#[pyfunction]
fn majority_precision(sheet_json: &str) -> PyResult<f64> {
    let sheet = RatingSheet::from_json(sheet_json).map_err(value_err)?;
    eval::majority_precision(&sheet).map_err(value_err)
}

#[pyfunction]
fn lcss_len(a: Vec<u16>, b: Vec<u16>) -> PyResult<usize> {
    baseline::lcss_len(&a, &b).map_err(value_err)
}

/// Macro-F1 of a square confusion matrix (rows are true classes).
#[pyfunction]
fn macro_f1(counts: Vec<Vec<u64>>) -> PyResult<f64> {
    if counts.is_empty() || counts.iter().any(|r| r.len() != counts.len()) {
        return Err(value_err("confusion matrix must be square and non-empty"));
    }
    Ok(eval::macro_f1(&ConfusionMatrix::from_counts(counts)))
}

/// A transformer bundle (`.zip`) or baseline model (`.json`).
#[pyclass(name = "Classifier", frozen)]
struct PyClassifier {
    inner: Classifier,
}

#[pymethods]
impl PyClassifier {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = if path.ends_with(".zip") {
            Classifier::from_bundle(path)
        } else if path.ends_with(".json") {
            Classifier::from_baseline(path)
        } else {
            return Err(value_err("expected a .zip bundle or a .json baseline model"));
        };
        inner
            .map(|inner| Self { inner })
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// `(id, message)` of every output class.
    fn classes(&self) -> Vec<(String, String)> {
        self.inner.classes().iter().map(|c| (c.id.clone(), c.message.clone())).collect()
    }

    #[getter]
    fn window_len(&self) -> usize {
        self.inner.window_len()
    }

    /// Label and confidence for one raw window: a list of samples, each
    /// `[acc_x, acc_y, acc_z, gyro_x, gyro_y, gyro_z]`.
    fn predict(&self, samples: Vec<Vec<f64>>) -> PyResult<(String, f64)> {
        let t = samples.len();
        if t != self.inner.window_len() {
            return Err(value_err(format!("expected {} samples, got {t}", self.inner.window_len())));
        }
        if let Some(bad) = samples.iter().find(|s| s.len() != CHANNELS) {
            return Err(value_err(format!("each sample needs {CHANNELS} values, got {}", bad.len())));
        }
        let data = (0..CHANNELS).flat_map(|c| samples.iter().map(move |s| s[c])).collect();
        let w = Window::new(data, "python", 0).map_err(value_err)?;
        self.inner.predict(&normalize(&w, self.inner.norm())).map_err(value_err)
    }
}

#[pymodule]
fn gesturewire_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(gwet_ac1, m)?)?;
    m.add_function(wrap_pyfunction!(majority_precision, m)?)?;
    m.add_function(wrap_pyfunction!(lcss_len, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_class::<PyClassifier>()?;
    Ok(())
}
