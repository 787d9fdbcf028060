//! Python bindings: tokenizer, ruleset, trained model inference, metrics
//! and the command line as a function.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ttsfront_core::decoder::DEFAULT_BEAM_WIDTH;
use ttsfront_core::metrics::{self, HdPrediction};
use ttsfront_core::model::MultiTaskModel;
use ttsfront_core::rules::Ruleset as CoreRuleset;
use ttsfront_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Data(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

#[pyclass(frozen, get_all)]
#[derive(Clone)]
struct Token {
    text: String,
    start: usize,
    end: usize,
    word_index: usize,
    uclass: String,
}

#[pymethods]
impl Token {
    fn __repr__(&self) -> String {
        format!("Token({:?}, {}..{}, word={}, {})", self.text, self.start, self.end, self.word_index, self.uclass)
    }
}

/// Splits on whitespace, then at every change of character class.
#[pyfunction]
fn tokenize(text: &str) -> Vec<Token> {
    ttsfront_core::tokenizer::tokenize(text)
        .tokens
        .into_iter()
        .map(|t| Token {
            start: t.span.start,
            end: t.span.end,
            word_index: t.word_index,
            uclass: t.uclass.as_str().to_string(),
            text: t.text,
        })
        .collect()
}

#[pyclass]
#[derive(Clone)]
struct Ruleset {
    inner: CoreRuleset,
}

#[pymethods]
impl Ruleset {
    #[staticmethod]
    fn builtin() -> Ruleset {
        Ruleset { inner: CoreRuleset::builtin() }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Ruleset> {
        CoreRuleset::load(path).map(|inner| Ruleset { inner }).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn names(&self) -> Vec<String> {
        self.inner.rules().iter().map(|r| r.name.clone()).collect()
    }

    #[getter]
    fn manifest_hash(&self) -> String {
        self.inner.manifest_hash().to_string()
    }

    /// Rule names applicable at each token, as the decoder sees them.
    fn applicable(&self, text: &str) -> Vec<Vec<String>> {
        let seq = ttsfront_core::tokenizer::tokenize(text);
        let mask = self.inner.applicability_mask(&seq);
        mask.rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(self.inner.rules())
                    .filter(|(ok, _)| **ok)
                    .map(|(_, r)| r.name.clone())
                    .collect()
            })
            .collect()
    }
}

/// A trained checkpoint.
#[pyclass(unsendable)]
struct Model {
    inner: MultiTaskModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    #[pyo3(signature = (path, ruleset=None))]
    fn load(path: PathBuf, ruleset: Option<&Ruleset>) -> PyResult<Model> {
        let rules = ruleset.map(|r| r.inner.clone()).unwrap_or_else(CoreRuleset::builtin);
        MultiTaskModel::load(&path, rules).map(|inner| Model { inner }).map_err(py_err)
    }

    #[getter]
    fn tasks(&self) -> Vec<String> {
        self.inner.config.tasks.iter().map(|t| t.as_str().to_string()).collect()
    }

    #[pyo3(signature = (text, beam_width=DEFAULT_BEAM_WIDTH))]
    fn normalize(&self, text: &str, beam_width: usize) -> PyResult<String> {
        self.inner.normalize(text, beam_width).map_err(py_err)
    }

    /// `(word, tag)` pairs.
    fn tag(&self, text: &str) -> PyResult<Vec<(String, String)>> {
        let mut out = self.inner.tag_lines(&[text]).map_err(py_err)?;
        Ok(out.pop().unwrap_or_default().into_iter().map(|(w, t)| (w, t.as_str().to_string())).collect())
    }

    /// Pronunciation label of the homograph at character offsets `start..end`.
    fn homograph(&self, text: &str, start: usize, end: usize) -> PyResult<String> {
        self.inner.homograph(text, start..end).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }
}

#[pyfunction]
fn wer(prediction: &str, reference: &str) -> PyResult<f64> {
    metrics::wer(prediction, reference).map_err(py_err)
}

/// `(micro, macro)` accuracy over `(homograph, gold, predicted)` triples.
#[pyfunction]
fn hd_accuracy(rows: Vec<(String, String, String)>) -> PyResult<(f64, f64)> {
    let preds: Vec<HdPrediction> = rows
        .into_iter()
        .map(|(homograph, gold, predicted)| HdPrediction { homograph, gold, predicted })
        .collect();
    metrics::hd_accuracy(&preds).map_err(py_err)
}

/// Parses EvalReport text into a `{key: value}` dict of metrics.
#[pyfunction]
fn parse_report(text: &str) -> PyResult<std::collections::BTreeMap<String, f64>> {
    metrics::EvalReport::parse(text).map(|r| r.metrics).map_err(py_err)
}

/// Runs the command line with `args` (without the program name) and
/// returns what it printed.
#[pyfunction]
fn run_cli(args: Vec<String>) -> PyResult<String> {
    let mut out = Vec::new();
    let argv = std::iter::once("ttsfront".to_string()).chain(args);
    ttsfront_core::cli::run(argv, &mut out).map_err(py_err)?;
    String::from_utf8(out).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "ttsfront")]
pub fn ttsfront_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Token>()?;
    m.add_class::<Ruleset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(wer, m)?)?;
    m.add_function(wrap_pyfunction!(hd_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(parse_report, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
