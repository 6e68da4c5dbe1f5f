//! Python bindings for the segmentation library.

use std::collections::HashMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use cats_core::corpus::{self, build_vocabs, generate_synthetic, Sentence, Split, SynthConfig, TokenEntry};
use cats_core::embeddings::{ContextSpec, StaticTable};
use cats_core::evaluation::{self, ErrorCategory, Task};
use cats_core::model::{CatsModel, ModelConfig};
use cats_core::trainer::{self, TrainConfig};
use cats_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// `(sent_id, [(surface, [segment, ...]), ...])`
type SegmentedSentence = (String, Vec<(String, Vec<String>)>);
/// `(sent_id, token_idx, ambiguous, gold_split)`
type ManifestRow = (String, usize, bool, bool);

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// A CoNLL-U corpus.
#[pyclass(name = "Corpus", module = "cats", skip_from_py_object)]
#[derive(Clone)]
struct PyCorpus {
    inner: corpus::Corpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    #[pyo3(signature = (path, split = "train"))]
    fn read(path: &str, split: &str) -> PyResult<Self> {
        let inner = corpus::read_conllu(path, parse(split)?).map_err(py_err)?;
        Ok(PyCorpus { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (text, split = "train"))]
    fn parse(text: &str, split: &str) -> PyResult<Self> {
        let inner = corpus::parse_conllu(text, parse(split)?).map_err(py_err)?;
        Ok(PyCorpus { inner })
    }

    /// Builds a corpus from `(sent_id, [(surface, [segment, ...]), ...])`.
    #[staticmethod]
    #[pyo3(signature = (sentences, split = "train"))]
    fn from_segments(sentences: Vec<SegmentedSentence>, split: &str) -> PyResult<Self> {
        let sentences = sentences
            .into_iter()
            .map(|(id, toks)| {
                let tokens = toks
                    .into_iter()
                    .map(|(surface, segs)| {
                        let t = TokenEntry::new(surface, segs);
                        t.validate().map(|_| t)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Sentence::new(id, tokens))
            })
            .collect::<Result<Vec<_>, Error>>()
            .map_err(py_err)?;
        Ok(PyCorpus {
            inner: corpus::Corpus::new(sentences, parse(split)?),
        })
    }

    fn to_conllu(&self) -> String {
        corpus::write_conllu(&self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn num_tokens(&self) -> usize {
        self.inner.num_tokens()
    }

    fn sent_ids(&self) -> Vec<String> {
        self.inner.sentences.iter().map(|s| s.sent_id.clone()).collect()
    }

    /// Per sentence, per token: the list of segments.
    fn segments(&self) -> Vec<Vec<Vec<String>>> {
        self.inner
            .sentences
            .iter()
            .map(|s| s.tokens.iter().map(|t| t.segments.clone()).collect())
            .collect()
    }

    fn surfaces(&self) -> Vec<Vec<String>> {
        self.inner
            .sentences
            .iter()
            .map(|s| s.tokens.iter().map(|t| t.surface.clone()).collect())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Corpus({} sentences, {} tokens)", self.inner.len(), self.inner.num_tokens())
    }
}

/// A trained segmentation model.
#[pyclass(name = "Model", module = "cats")]
struct PyModel {
    inner: CatsModel<f32>,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (inner, _) = CatsModel::load(path).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    #[pyo3(signature = (path, run = ""))]
    fn save(&self, path: &str, run: &str) -> PyResult<()> {
        self.inner.save(path, run).map_err(py_err)
    }

    #[getter]
    fn joint(&self) -> bool {
        self.inner.config().joint
    }

    #[getter]
    fn embeddings(&self) -> String {
        self.inner.provider().mode().to_string()
    }

    /// Segments every token; returns the predicted corpus.
    #[pyo3(signature = (corpus, beam = None, threads = 1))]
    fn predict(&self, py: Python<'_>, corpus: &PyCorpus, beam: Option<usize>, threads: usize) -> PyResult<PyCorpus> {
        let input = corpus.inner.clone();
        let pred = py
            .detach(|| self.inner.predict_corpus(&input, beam, threads))
            .map_err(py_err)?;
        Ok(PyCorpus { inner: pred.corpus })
    }

    /// Segments one whitespace-tokenized sentence.
    #[pyo3(signature = (tokens, beam = None))]
    fn segment(&self, tokens: Vec<String>, beam: Option<usize>) -> PyResult<Vec<Vec<String>>> {
        let s = Sentence::new("input", tokens.into_iter().map(TokenEntry::unsegmented).collect());
        let c = corpus::Corpus::new(vec![s], Split::Test);
        let pred = self.inner.predict_corpus(&c, beam, 1).map_err(py_err)?;
        Ok(pred.corpus.sentences[0].tokens.iter().map(|t| t.segments.clone()).collect())
    }
}

/// Trains a model and returns it with the per-epoch report rows.
#[pyfunction]
#[pyo3(signature = (
    train, dev, embeddings = "zeros", epochs = None, lr = 1e-3, batch_size = 128, seed = 1,
    joint = false, lam = 0.2, d_char = 100, d_enc = 256, d_dec = 256, d_att = 128,
    ctx_dim = 300, token_dim = 300, rnn_hidden = 100,
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    train: &PyCorpus,
    dev: &PyCorpus,
    embeddings: &str,
    epochs: Option<usize>,
    lr: f64,
    batch_size: usize,
    seed: u64,
    joint: bool,
    lam: f64,
    d_char: usize,
    d_enc: usize,
    d_dec: usize,
    d_att: usize,
    ctx_dim: usize,
    token_dim: usize,
    rnn_hidden: usize,
) -> PyResult<(PyModel, Vec<HashMap<String, f64>>)> {
    let (train_set, dev_set) = (train.inner.clone(), dev.inner.clone());
    let spec = match embeddings {
        "zeros" => ContextSpec::Zeros { dim: ctx_dim },
        "rnn" => {
            let mut keys: Vec<&str> = train_set.tokens().map(|t| t.surface.as_str()).collect();
            keys.sort_unstable();
            keys.dedup();
            ContextSpec::Rnn {
                table: StaticTable::random(keys, token_dim, seed).map_err(py_err)?,
                hidden: rnn_hidden,
            }
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "embeddings {other:?} is not available here; use zeros or rnn, or the command line"
            )))
        }
    };
    let cfg = ModelConfig {
        d_char,
        d_enc,
        d_dec,
        d_att,
        joint,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        learning_rate: lr,
        batch_size,
        epochs,
        lambda: lam,
        seed,
        ..TrainConfig::default()
    };
    let (model, report) = py
        .detach(|| {
            let (chars, labels) = build_vocabs(&train_set)?;
            let model = CatsModel::<f32>::new(cfg, chars, labels, spec, seed)?;
            trainer::train(model, &train_set, &dev_set, &tc)
        })
        .map_err(py_err)?;
    let rows = report
        .rows
        .iter()
        .map(|r| {
            let mut m = HashMap::from([
                ("epoch".to_string(), r.epoch as f64),
                ("train_loss".to_string(), r.train_loss),
                ("dev_seg_f1".to_string(), r.dev_seg_f1),
            ]);
            if let Some(l) = r.dev_labeled_f1 {
                m.insert("dev_labeled_f1".to_string(), l);
            }
            m
        })
        .collect();
    Ok((PyModel { inner: model }, rows))
}

/// Precision, recall, F1 and counts for `task` (seg, pos, dep or ner).
#[pyfunction]
#[pyo3(signature = (pred, gold, task = "seg"))]
fn evaluate(pred: &PyCorpus, gold: &PyCorpus, task: &str) -> PyResult<HashMap<String, f64>> {
    let task: Task = parse(task)?;
    let r = evaluation::evaluate(task, &pred.inner, &gold.inner).map_err(py_err)?;
    Ok(HashMap::from([
        ("precision".to_string(), r.precision),
        ("recall".to_string(), r.recall),
        ("f1".to_string(), r.f1),
        ("matched".to_string(), r.matched as f64),
        ("predicted".to_string(), r.predicted as f64),
        ("gold".to_string(), r.gold as f64),
    ]))
}

/// Error counts by category over a seeded sample of sentences.
#[pyfunction]
#[pyo3(signature = (pred, gold, sample = 100, seed = 1))]
fn analyze(pred: &PyCorpus, gold: &PyCorpus, sample: usize, seed: u64) -> PyResult<HashMap<String, usize>> {
    let b = evaluation::analyze_errors(&pred.inner, &gold.inner, sample, seed).map_err(py_err)?;
    Ok(ErrorCategory::ALL.iter().map(|&c| (c.name().to_string(), b.count(c))).collect())
}

/// A synthetic corpus and its manifest rows
/// `(sent_id, token_idx, ambiguous, gold_split)`.
#[pyfunction]
#[pyo3(signature = (n, seed = 1))]
fn synth(n: usize, seed: u64) -> PyResult<(PyCorpus, Vec<ManifestRow>)> {
    let s = generate_synthetic(SynthConfig { n_sentences: n, seed }).map_err(py_err)?;
    let rows = s
        .manifest
        .into_iter()
        .map(|r| (r.sent_id, r.token_idx, r.ambiguous, r.gold_split))
        .collect();
    Ok((PyCorpus { inner: s.corpus }, rows))
}

/// Runs the command line in-process; returns `(exit code, stdout, stderr)`.
#[pyfunction]
fn run_cli(args: Vec<String>) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cats_core::cli::run(std::iter::once("cats".to_string()).chain(args), &mut out, &mut err);
    (
        code,
        String::from_utf8_lossy(&out).into_owned(),
        String::from_utf8_lossy(&err).into_owned(),
    )
}

#[pymodule]
fn cats(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
