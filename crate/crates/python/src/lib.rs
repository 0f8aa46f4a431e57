//! Python bindings: tokenizer, prompt rendering, n-gram query generation,
//! BM25 index, merge and metrics, plus the file-based pipeline commands.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use queryrec::beam::BeamConfig;
use queryrec::config::PipelineConfig;
use queryrec::corpus::{Catalog, Item};
use queryrec::generator::{self, QueryGenerator};
use queryrec::search::{self, Bm25Params};
use queryrec::{evaluate, pipeline, recommend, synth, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        Error::UnknownItem(_) | Error::UnknownUser(_) => PyKeyError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    generator::tokenize(text)
}

#[pyfunction]
fn format_prompt(titles: Vec<String>) -> PyResult<String> {
    queryrec::corpus::format_prompt(&titles).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (log_probs, gamma = generator::DEFAULT_GAMMA))]
fn generation_score(log_probs: Vec<f64>, gamma: f64) -> PyResult<f64> {
    generator::generation_score(&log_probs, gamma).map_err(to_py)
}

/// Smoothed n-gram language model over query tokens.
#[pyclass(name = "NGramModel", module = "queryrec_py", frozen)]
struct PyNGramModel {
    inner: generator::NGramModel,
}

#[pymethods]
impl PyNGramModel {
    #[new]
    #[pyo3(signature = (lines, order = 3, alpha = 0.01))]
    fn new(lines: Vec<String>, order: usize, alpha: f64) -> PyResult<Self> {
        let inner = generator::NGramModel::train(&lines, order, alpha).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    /// Token strings indexed by id.
    #[getter]
    fn vocab(&self) -> Vec<String> {
        self.inner.vocab().tokens().to_vec()
    }

    /// Next-token probabilities after `context` (text), optionally mixed
    /// with a history model at weight `history_bias`.
    #[pyo3(signature = (context, history_titles = Vec::new(), history_bias = 0.0))]
    fn next_token_distribution(&self, context: &str, history_titles: Vec<String>, history_bias: f64) -> PyResult<Vec<(String, f64)>> {
        if !(0.0..=1.0).contains(&history_bias) {
            return Err(PyValueError::new_err("history_bias must lie in [0, 1]"));
        }
        let vocab = self.inner.vocab();
        let ids = vocab.encode(context);
        let history = self.inner.history_model(&history_titles);
        let dist = generator::next_token_distribution(&self.inner, &ids, &history, history_bias);
        Ok(dist
            .into_iter()
            .enumerate()
            .filter(|(_, p)| *p > 0.0)
            .map(|(id, p)| (vocab.token(id as generator::TokenId).to_string(), p))
            .collect())
    }

    /// Beam-searched queries as `(text, score)`, best first.
    #[pyo3(signature = (history_titles, num_queries = 10, max_tokens = 12, history_bias = 0.5, gamma = generator::DEFAULT_GAMMA))]
    fn generate_queries(
        &self,
        py: Python<'_>,
        history_titles: Vec<String>,
        num_queries: usize,
        max_tokens: usize,
        history_bias: f64,
        gamma: f64,
    ) -> PyResult<Vec<(String, f64)>> {
        let prompt = queryrec::corpus::format_prompt(&history_titles).map_err(to_py)?;
        let config = BeamConfig {
            beam_size: num_queries,
            max_len: max_tokens,
            gamma,
        };
        let batch = py
            .detach(|| queryrec::beam::generate_queries(&prompt, &history_titles, &self.inner, history_bias, &config))
            .map_err(to_py)?;
        Ok(batch.queries.into_iter().map(|q| (q.text, q.score)).collect())
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: serde_json::from_str(text).map_err(json_err)?,
        })
    }
}

/// BM25 inverted index over item titles.
#[pyclass(name = "InvertedIndex", module = "queryrec_py", frozen)]
struct PyInvertedIndex {
    inner: search::InvertedIndex,
}

fn params(k1: f64, b: f64) -> PyResult<Bm25Params> {
    Bm25Params::new(k1, b).map_err(to_py)
}

#[pymethods]
impl PyInvertedIndex {
    /// `items` maps item id to title.
    #[new]
    fn new(items: Vec<(String, String)>) -> PyResult<Self> {
        let catalog: Catalog = items
            .into_iter()
            .map(|(item_id, title)| {
                (
                    item_id.clone(),
                    Item {
                        item_id,
                        title,
                        categories: BTreeSet::new(),
                        brand: None,
                    },
                )
            })
            .collect();
        Ok(Self {
            inner: search::InvertedIndex::build(&catalog).map_err(to_py)?,
        })
    }

    #[getter]
    fn num_docs(&self) -> usize {
        self.inner.num_docs()
    }

    #[getter]
    fn avgdl(&self) -> f64 {
        self.inner.avgdl()
    }

    fn doc_freq(&self, term: &str) -> usize {
        self.inner.doc_freq(term)
    }

    #[pyo3(signature = (query, top_k = 10, k1 = 1.2, b = 0.75))]
    fn search(&self, query: &str, top_k: usize, k1: f64, b: f64) -> PyResult<Vec<(String, f64)>> {
        let p = params(k1, b)?;
        Ok(self
            .inner
            .search(&p, query, top_k)
            .into_iter()
            .map(|h| (h.item_id, h.score))
            .collect())
    }

    #[pyo3(signature = (query, item_id, k1 = 1.2, b = 0.75))]
    fn bm25_score(&self, query: &str, item_id: &str, k1: f64, b: f64) -> PyResult<f64> {
        let p = params(k1, b)?;
        self.inner
            .bm25_score(&p, &generator::tokenize(query), item_id)
            .map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: serde_json::from_str(text).map_err(json_err)?,
        })
    }
}

/// Merged `(item_id, source_query, source_rank)` triples.
#[pyfunction]
fn merge_results(hit_lists: Vec<Vec<String>>, k: usize) -> PyResult<Vec<(String, usize, usize)>> {
    Ok(recommend::merge_results(&hit_lists, k)
        .map_err(to_py)?
        .into_iter()
        .map(|m| (m.item_id, m.source_query, m.source_rank))
        .collect())
}

#[pyfunction]
fn quotas(k: usize, m: usize) -> PyResult<Vec<usize>> {
    if m == 0 {
        return Err(PyValueError::new_err("m must be at least 1"));
    }
    Ok(recommend::quotas(k, m))
}

#[pyfunction]
fn recall_at_k(recommended: Vec<String>, target: &str, k: usize) -> f64 {
    evaluate::recall_at_k(&recommended, target, k)
}

#[pyfunction]
fn jaccard(a: BTreeSet<String>, b: BTreeSet<String>) -> f64 {
    evaluate::jaccard(&a, &b)
}

/// Diversity over attribute sets; `None` when `len(sets) != k`.
#[pyfunction]
fn diversity(sets: Vec<BTreeSet<String>>, k: usize) -> PyResult<Option<f64>> {
    evaluate::diversity_of_sets(&sets, k).map_err(to_py)
}

/// Coverage of the history's attributes; `None` when the history has none.
#[pyfunction]
fn coverage(recommended: Vec<BTreeSet<String>>, history: Vec<BTreeSet<String>>) -> Option<f64> {
    evaluate::coverage_of_sets(&recommended, &history)
}

/// Writes the synthetic dataset into `out_dir`; returns the two paths.
#[pyfunction]
#[pyo3(signature = (out_dir, users = 1000, seed = None))]
fn write_synthetic_dataset(out_dir: PathBuf, users: usize, seed: Option<u64>) -> PyResult<(PathBuf, PathBuf)> {
    let mut cfg = synth::SynthConfig {
        users,
        ..Default::default()
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let data = synth::generate(&cfg).map_err(to_py)?;
    synth::write_dataset(&data, &out_dir).map_err(to_py)
}

/// File-based pipeline driven by a config.
#[pyclass(name = "Pipeline", module = "queryrec_py", frozen)]
struct PyPipeline {
    config: PipelineConfig,
}

impl PyPipeline {
    fn generator(&self) -> PyResult<Box<dyn QueryGenerator>> {
        pipeline::build_generator(&self.config).map_err(to_py)
    }
}

#[pymethods]
impl PyPipeline {
    #[new]
    fn new(interactions: PathBuf, catalog: PathBuf, work_dir: PathBuf) -> Self {
        Self {
            config: PipelineConfig::new(interactions, catalog, work_dir),
        }
    }

    #[staticmethod]
    fn from_config(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            config: PipelineConfig::load(&path).map_err(to_py)?,
        })
    }

    /// Returns the manifest as a JSON string.
    fn prepare(&self, py: Python<'_>) -> PyResult<String> {
        let manifest = py.detach(|| pipeline::prepare(&self.config)).map_err(to_py)?;
        serde_json::to_string(&manifest).map_err(json_err)
    }

    fn train(&self, py: Python<'_>) -> PyResult<String> {
        let meta = py.detach(|| pipeline::train(&self.config)).map_err(to_py)?;
        serde_json::to_string(&meta).map_err(json_err)
    }

    /// Returns `(k1, b)`.
    fn tune(&self, py: Python<'_>) -> PyResult<(f64, f64)> {
        let generator = self.generator()?;
        let (params, _) = py
            .detach(|| pipeline::tune(&self.config, generator.as_ref()))
            .map_err(to_py)?;
        Ok((params.k1, params.b))
    }

    /// One JSON record with queries and merged items.
    fn recommend(&self, py: Python<'_>, user_id: String, k: usize) -> PyResult<String> {
        let generator = self.generator()?;
        let recs = py
            .detach(|| pipeline::recommend(&self.config, generator.as_ref(), &pipeline::UserSelection::One(user_id), k))
            .map_err(to_py)?;
        serde_json::to_string(&recs[0]).map_err(json_err)
    }

    /// One JSON metrics report per beam size.
    fn eval(&self, py: Python<'_>, beam_sizes: Vec<usize>) -> PyResult<Vec<String>> {
        let generator = self.generator()?;
        let reports = py
            .detach(|| pipeline::eval(&self.config, generator.as_ref(), &beam_sizes, false))
            .map_err(to_py)?;
        reports
            .iter()
            .map(|r| serde_json::to_string(r).map_err(json_err))
            .collect()
    }
}

#[pymodule]
fn queryrec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(format_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(generation_score, m)?)?;
    m.add_function(wrap_pyfunction!(merge_results, m)?)?;
    m.add_function(wrap_pyfunction!(quotas, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(diversity, m)?)?;
    m.add_function(wrap_pyfunction!(coverage, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic_dataset, m)?)?;
    m.add_class::<PyNGramModel>()?;
    m.add_class::<PyInvertedIndex>()?;
    m.add_class::<PyPipeline>()?;
    Ok(())
}
