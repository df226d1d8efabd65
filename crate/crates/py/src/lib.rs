//! Python bindings (`import ser_emotion`).

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use ser_core::dataset::{self, ClassLabel};
use ser_core::dsp::{self, MelExtractor};
use ser_core::model::{ModelError, SerModel};
use ser_core::pipeline::features_from_wav as pipeline_features;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn model_err(e: ModelError) -> PyErr {
    match e {
        ModelError::Io(io) => PyIOError::new_err(io.to_string()),
        other => value_err(other),
    }
}

/// Mel value of a frequency in Hz (HTK formula).
#[pyfunction]
fn hz_to_mel(hz: f64) -> PyResult<f64> {
    dsp::hz_to_mel(hz).map_err(value_err)
}

/// Inverse of `hz_to_mel`.
#[pyfunction]
fn mel_to_hz(mel: f64) -> PyResult<f64> {
    dsp::mel_to_hz(mel).map_err(value_err)
}

/// The 12 class names in class-index order.
#[pyfunction]
fn class_labels() -> Vec<String> {
    ClassLabel::all().iter().map(|c| c.to_string()).collect()
}

/// Decode a RAVDESS file name into a dict of its fields and merged class.
#[pyfunction]
fn parse_ravdess_filename<'py>(py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyDict>> {
    let raw = dataset::parse_ravdess_filename(name).map_err(value_err)?;
    let label = dataset::convert_label(&raw);
    let d = PyDict::new_bound(py);
    d.set_item("emotion_code", raw.emotion.code())?;
    d.set_item("statement", raw.statement)?;
    d.set_item("repetition", raw.repetition)?;
    d.set_item("actor_id", raw.actor_id)?;
    d.set_item("gender", raw.gender.as_str())?;
    d.set_item("emotion", label.emotion.as_str())?;
    d.set_item("label", label.to_string())?;
    d.set_item("class_index", label.index())?;
    Ok(d)
}

/// Decode WAV bytes to `(mono samples, sample_rate)`.
#[pyfunction]
fn decode_wav(data: &[u8]) -> PyResult<(Vec<f32>, u32)> {
    let clip = ser_core::decode_wav(data).map_err(value_err)?;
    Ok((clip.samples, clip.sample_rate))
}

/// Log-mel features of WAV bytes as rows of dB values (128 × 130).
#[pyfunction]
fn features_from_wav(data: &[u8]) -> PyResult<Vec<Vec<f64>>> {
    let p = pipeline_features(data, &MelExtractor::default()).map_err(value_err)?;
    let m = &p.features.values;
    Ok(m.data.chunks(m.cols).map(|r| r.to_vec()).collect())
}

/// A trained or freshly initialized emotion classifier.
#[pyclass(name = "Model", module = "ser_emotion")]
struct PyModel {
    inner: SerModel,
    extractor: MelExtractor,
}

#[pymethods]
impl PyModel {
    /// Fresh weights drawn from `seed`.
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> Self {
        Self {
            inner: ser_core::build_ser_model(seed),
            extractor: MelExtractor::default(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = SerModel::load(&path).map_err(model_err)?;
        Ok(Self {
            inner,
            extractor: MelExtractor::default(),
        })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        let inner = SerModel::from_bytes(data).map_err(model_err)?;
        Ok(Self {
            inner,
            extractor: MelExtractor::default(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(model_err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = self.inner.to_bytes().map_err(model_err)?;
        Ok(PyBytes::new_bound(py, &bytes))
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    /// Rank all 12 classes for WAV bytes: `[(label, probability), ...]`, best first.
    fn predict_wav(&self, py: Python<'_>, data: &[u8]) -> PyResult<Vec<(String, f64)>> {
        let (model, extractor) = (&self.inner, &self.extractor);
        let result = py.allow_threads(|| -> Result<_, String> {
            let p = pipeline_features(data, extractor).map_err(|e| e.to_string())?;
            model.predict(&p.features).map_err(|e| e.to_string())
        });
        let result = result.map_err(PyValueError::new_err)?;
        Ok(result
            .ranked
            .iter()
            .map(|r| (r.label.to_string(), r.probability))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Model(parameters={})", self.inner.parameter_count())
    }
}

#[pymodule]
fn ser_emotion(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(hz_to_mel, m)?)?;
    m.add_function(wrap_pyfunction!(mel_to_hz, m)?)?;
    m.add_function(wrap_pyfunction!(class_labels, m)?)?;
    m.add_function(wrap_pyfunction!(parse_ravdess_filename, m)?)?;
    m.add_function(wrap_pyfunction!(decode_wav, m)?)?;
    m.add_function(wrap_pyfunction!(features_from_wav, m)?)?;
    m.add_class::<PyModel>()?;
    Ok(())
}
