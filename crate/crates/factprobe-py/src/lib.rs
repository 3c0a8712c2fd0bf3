//! Python bindings for the factual-probing workbench. Thin wrappers around
//! the core types; arrays cross the boundary as plain lists of floats.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use ndarray::Array1;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use factprobe::baselines;
use factprobe::corpus;
use factprobe::eval;
use factprobe::mlm;
use factprobe::optimize;
use factprobe::prompts;

fn err(e: factprobe::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_category(s: &str) -> PyResult<corpus::RelationCategory> {
    match s {
        "1-1" => Ok(corpus::RelationCategory::OneToOne),
        "N-1" => Ok(corpus::RelationCategory::ManyToOne),
        "N-M" => Ok(corpus::RelationCategory::ManyToMany),
        other => Err(PyValueError::new_err(format!(
            "unknown relation category {other:?} (expected 1-1, N-1, or N-M)"
        ))),
    }
}

/// Token inventory with special-token bookkeeping.
#[pyclass(frozen, name = "Vocabulary")]
struct PyVocabulary {
    inner: corpus::Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    #[new]
    #[pyo3(signature = (tokens, mask, pad=None, unk=None, subject_marker=None))]
    fn new(
        tokens: Vec<String>,
        mask: &str,
        pad: Option<String>,
        unk: Option<String>,
        subject_marker: Option<String>,
    ) -> PyResult<Self> {
        let inner = corpus::Vocabulary::new(
            tokens,
            mask,
            pad.as_deref(),
            unk.as_deref(),
            subject_marker.as_deref(),
        )
        .map_err(err)?;
        Ok(PyVocabulary { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyVocabulary {
            inner: corpus::Vocabulary::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn mask_id(&self) -> usize {
        self.inner.mask_id()
    }

    #[getter]
    fn content_size(&self) -> usize {
        self.inner.content_size()
    }

    fn id(&self, token: &str) -> Option<usize> {
        self.inner.id(token)
    }

    fn token(&self, id: usize) -> String {
        self.inner.token(id).to_string()
    }
}

/// One ⟨subject, relation, object⟩ triple with a single-token object.
#[pyclass(frozen, name = "Fact", from_py_object)]
#[derive(Clone)]
struct PyFact {
    inner: corpus::Fact,
}

#[pymethods]
impl PyFact {
    #[new]
    fn new(subject: &str, relation: &str, object: &str, vocab: &PyVocabulary) -> PyResult<Self> {
        Ok(PyFact {
            inner: corpus::Fact::new(subject, relation, object, &vocab.inner).map_err(err)?,
        })
    }

    #[getter]
    fn subject(&self) -> String {
        self.inner.subject.clone()
    }

    #[getter]
    fn relation(&self) -> String {
        self.inner.relation.clone()
    }

    #[getter]
    fn object(&self) -> String {
        self.inner.object.clone()
    }

    #[getter]
    fn object_id(&self) -> usize {
        self.inner.object_id
    }

    fn __repr__(&self) -> String {
        format!(
            "Fact({:?}, {:?}, {:?})",
            self.inner.subject, self.inner.relation, self.inner.object
        )
    }
}

/// Per-relation train/dev/test splits.
#[pyclass(frozen, name = "Dataset")]
struct PyDataset {
    inner: corpus::RelationDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (relation, category, train, dev, test, allow_overlap=false))]
    fn new(
        relation: &str,
        category: &str,
        train: Vec<PyFact>,
        dev: Vec<PyFact>,
        test: Vec<PyFact>,
        allow_overlap: bool,
    ) -> PyResult<Self> {
        let unwrap = |fs: Vec<PyFact>| fs.into_iter().map(|f| f.inner).collect();
        let inner = corpus::RelationDataset::new(
            relation,
            parse_category(category)?,
            unwrap(train),
            unwrap(dev),
            unwrap(test),
            allow_overlap,
        )
        .map_err(err)?;
        Ok(PyDataset { inner })
    }

    #[getter]
    fn relation(&self) -> String {
        self.inner.relation.clone()
    }

    #[getter]
    fn train(&self) -> Vec<PyFact> {
        self.inner.train.iter().map(|f| PyFact { inner: f.clone() }).collect()
    }

    #[getter]
    fn dev(&self) -> Vec<PyFact> {
        self.inner.dev.iter().map(|f| PyFact { inner: f.clone() }).collect()
    }

    #[getter]
    fn test(&self) -> Vec<PyFact> {
        self.inner.test.iter().map(|f| PyFact { inner: f.clone() }).collect()
    }
}

/// The small masked language model.
#[pyclass(frozen, name = "Model")]
struct PyModel {
    inner: mlm::MlmModel,
}

#[pymethods]
impl PyModel {
    /// Fully random model: every weight drawn from N(0, 0.02).
    #[staticmethod]
    #[pyo3(signature = (vocab_size, embed_dim=16, num_layers=1, num_heads=2, ffn_dim=32, max_seq_len=16, seed=0))]
    fn random(
        vocab_size: usize,
        embed_dim: usize,
        num_layers: usize,
        num_heads: usize,
        ffn_dim: usize,
        max_seq_len: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let config = mlm::ModelConfig {
            embed_dim,
            num_layers,
            num_heads,
            ffn_dim,
            max_seq_len,
            vocab_size,
            seed: 0,
        };
        let inner = mlm::init_model(&config, &mlm::InitRegime::RandomModel { seed }).map_err(err)?;
        Ok(PyModel { inner })
    }

    /// Random-embeddings control: keep the blocks of a seed-initialized
    /// model, redraw the (tied) embeddings.
    #[staticmethod]
    #[pyo3(signature = (vocab_size, base_seed, seed, embed_dim=16, num_layers=1, num_heads=2, ffn_dim=32, max_seq_len=16))]
    fn random_embeddings(
        vocab_size: usize,
        base_seed: u64,
        seed: u64,
        embed_dim: usize,
        num_layers: usize,
        num_heads: usize,
        ffn_dim: usize,
        max_seq_len: usize,
    ) -> PyResult<Self> {
        let config = mlm::ModelConfig {
            embed_dim,
            num_layers,
            num_heads,
            ffn_dim,
            max_seq_len,
            vocab_size,
            seed: 0,
        };
        let regime = mlm::InitRegime::RandomEmbeddings {
            base: mlm::BaseSource::Seed(base_seed),
            seed,
        };
        Ok(PyModel {
            inner: mlm::init_model(&config, &regime).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: mlm::load_checkpoint(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        mlm::save_checkpoint(&self.inner, path).map_err(err)
    }

    #[getter]
    fn param_hash(&self) -> String {
        mlm::param_hash(&self.inner)
    }

    #[getter]
    fn num_params(&self) -> usize {
        mlm::Params::num_params(&self.inner.config)
    }
}

/// A prompt: manual pattern, trigger tokens, or dense vectors.
#[pyclass(frozen, name = "Template")]
struct PyTemplate {
    inner: prompts::PromptTemplate,
}

#[pymethods]
impl PyTemplate {
    /// Parse a manual pattern like "[X] was born in [MASK]".
    #[staticmethod]
    fn manual(relation: &str, text: &str, vocab: &PyVocabulary) -> PyResult<Self> {
        let t = prompts::ManualTemplate::parse(relation, text, &vocab.inner).map_err(err)?;
        Ok(PyTemplate {
            inner: prompts::PromptTemplate::Manual(t),
        })
    }

    /// Dense prompt with m vectors drawn from N(0, 0.02).
    #[staticmethod]
    fn dense_random(relation: &str, m: usize, embed_dim: usize, seed: u64) -> PyResult<Self> {
        let t = prompts::dense_random(relation, m, embed_dim, seed).map_err(err)?;
        Ok(PyTemplate {
            inner: prompts::PromptTemplate::Dense(t),
        })
    }

    /// Dense prompt seeded from a manual pattern's embedding rows.
    #[staticmethod]
    fn dense_from_manual(
        relation: &str,
        text: &str,
        vocab: &PyVocabulary,
        model: &PyModel,
    ) -> PyResult<Self> {
        let manual = prompts::ManualTemplate::parse(relation, text, &vocab.inner).map_err(err)?;
        let t = prompts::dense_from_manual(&manual, &model.inner).map_err(err)?;
        Ok(PyTemplate {
            inner: prompts::PromptTemplate::Dense(t),
        })
    }

    #[getter]
    fn relation(&self) -> String {
        self.inner.relation().to_string()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner {
            prompts::PromptTemplate::Manual(_) => "manual",
            prompts::PromptTemplate::Trigger(_) => "trigger",
            prompts::PromptTemplate::Dense(_) => "dense",
        }
    }

    /// Dense vectors as lists of floats (dense templates only).
    #[getter]
    fn vectors(&self) -> Option<Vec<Vec<f64>>> {
        match &self.inner {
            prompts::PromptTemplate::Dense(d) => {
                Some(d.vectors.iter().map(|v| v.to_vec()).collect())
            }
            _ => None,
        }
    }

    /// Trigger token ids (trigger templates only).
    #[getter]
    fn trigger_ids(&self) -> Option<Vec<usize>> {
        match &self.inner {
            prompts::PromptTemplate::Trigger(t) => Some(t.trigger_ids.clone()),
            _ => None,
        }
    }
}

fn train_config(
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    warmup_ratio: f64,
    seed: u64,
) -> optimize::TrainConfig {
    optimize::TrainConfig {
        epochs,
        learning_rate,
        batch_size,
        warmup_ratio,
        seed,
    }
}

fn trace_dict(py: Python<'_>, trace: &optimize::TrainTrace) -> PyResult<Py<PyAny>> {
    let epochs: Vec<(usize, f64, f64)> = trace
        .epochs
        .iter()
        .map(|e| (e.epoch, e.train_nll, e.dev_accuracy))
        .collect();
    let d = pyo3::types::PyDict::new(py);
    d.set_item("epochs", epochs)?;
    d.set_item("selected_epoch", trace.selected_epoch)?;
    d.set_item("wall_time_secs", trace.wall_time_secs)?;
    Ok(d.into())
}

/// Optimize dense prompt vectors; the model stays frozen.
#[pyfunction]
#[pyo3(signature = (model, dataset, init, vocab, epochs=10, learning_rate=3e-3, batch_size=16, warmup_ratio=0.1, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_dense(
    py: Python<'_>,
    model: &PyModel,
    dataset: &PyDataset,
    init: &PyTemplate,
    vocab: &PyVocabulary,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    warmup_ratio: f64,
    seed: u64,
) -> PyResult<(PyTemplate, Py<PyAny>)> {
    let dense = match &init.inner {
        prompts::PromptTemplate::Dense(d) => d,
        _ => return Err(PyValueError::new_err("init template must be dense")),
    };
    let cfg = train_config(epochs, learning_rate, batch_size, warmup_ratio, seed);
    let (tuned, trace) =
        optimize::train_dense(&model.inner, &dataset.inner, dense, &cfg, &vocab.inner)
            .map_err(err)?;
    Ok((
        PyTemplate {
            inner: prompts::PromptTemplate::Dense(tuned),
        },
        trace_dict(py, &trace)?,
    ))
}

/// Gradient-guided discrete trigger search; the model stays frozen.
#[pyfunction]
#[pyo3(signature = (model, dataset, m, vocab, iterations=1000, candidates_per_step=10, banned=vec![], epochs=10, learning_rate=3e-3, batch_size=16, warmup_ratio=0.1, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_trigger_search(
    py: Python<'_>,
    model: &PyModel,
    dataset: &PyDataset,
    m: usize,
    vocab: &PyVocabulary,
    iterations: usize,
    candidates_per_step: usize,
    banned: Vec<usize>,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    warmup_ratio: f64,
    seed: u64,
) -> PyResult<(PyTemplate, Py<PyAny>)> {
    let cfg = train_config(epochs, learning_rate, batch_size, warmup_ratio, seed);
    let mut search = optimize::SearchConfig::new(
        candidates_per_step,
        banned.into_iter().collect::<BTreeSet<usize>>(),
    );
    search.iterations = iterations;
    let (tpl, trace) = optimize::train_trigger_search(
        &model.inner,
        &dataset.inner,
        m,
        &cfg,
        &search,
        &vocab.inner,
    )
    .map_err(err)?;
    Ok((
        PyTemplate {
            inner: prompts::PromptTemplate::Trigger(tpl),
        },
        trace_dict(py, &trace)?,
    ))
}

/// Fine-tune every model parameter with a fixed template.
#[pyfunction]
#[pyo3(signature = (model, dataset, template, vocab, epochs=10, learning_rate=2e-6, batch_size=2, warmup_ratio=0.1, seed=0))]
#[allow(clippy::too_many_arguments)]
fn finetune(
    py: Python<'_>,
    model: &PyModel,
    dataset: &PyDataset,
    template: &PyTemplate,
    vocab: &PyVocabulary,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    warmup_ratio: f64,
    seed: u64,
) -> PyResult<(PyModel, Py<PyAny>)> {
    let cfg = train_config(epochs, learning_rate, batch_size, warmup_ratio, seed);
    let (tuned, trace) = optimize::finetune(
        &model.inner,
        &dataset.inner,
        &template.inner,
        &cfg,
        &vocab.inner,
    )
    .map_err(err)?;
    Ok((PyModel { inner: tuned }, trace_dict(py, &trace)?))
}

/// Top-1 prediction at the mask over the content vocabulary.
#[pyfunction]
fn predict(
    model: &PyModel,
    template: &PyTemplate,
    fact: &PyFact,
    vocab: &PyVocabulary,
) -> PyResult<(String, bool)> {
    let rec = eval::predict_top1(
        &model.inner,
        &template.inner,
        &fact.inner,
        &vocab.inner,
        None,
        None,
    )
    .map_err(err)?;
    Ok((rec.predicted, rec.correct))
}

/// Top-1 accuracy of a template over a list of facts.
#[pyfunction]
fn accuracy(
    model: &PyModel,
    template: &PyTemplate,
    facts: Vec<PyFact>,
    vocab: &PyVocabulary,
) -> PyResult<f64> {
    let facts: Vec<corpus::Fact> = facts.into_iter().map(|f| f.inner).collect();
    eval::template_accuracy(&model.inner, &template.inner, &facts, &vocab.inner).map_err(err)
}

/// Mask logits for one fact under a template, as a list of floats.
#[pyfunction]
fn mask_logits(
    model: &PyModel,
    template: &PyTemplate,
    fact: &PyFact,
    vocab: &PyVocabulary,
) -> PyResult<Vec<f64>> {
    let r = prompts::render(&template.inner, &fact.inner, &model.inner, &vocab.inner)
        .map_err(err)?;
    let logits: Array1<f64> = model
        .inner
        .forward_mask_logits(&r.input_vectors, r.mask_position)
        .map_err(err)?;
    Ok(logits.to_vec())
}

/// Bag-of-words Naive Bayes baseline.
#[pyclass(frozen, name = "NaiveBayes")]
struct PyNaiveBayes {
    inner: baselines::NaiveBayesModel,
}

#[pymethods]
impl PyNaiveBayes {
    #[staticmethod]
    fn fit(datasets: Vec<PyRef<PyDataset>>, vocab: &PyVocabulary) -> PyResult<Self> {
        let refs: Vec<&corpus::RelationDataset> = datasets.iter().map(|d| &d.inner).collect();
        Ok(PyNaiveBayes {
            inner: baselines::NaiveBayesModel::fit(refs, &vocab.inner).map_err(err)?,
        })
    }

    fn predict(&self, fact: &PyFact, vocab: &PyVocabulary) -> PyResult<String> {
        let id = self.inner.predict(&fact.inner).map_err(err)?;
        Ok(vocab.inner.token(id).to_string())
    }
}

/// Majority-class baseline.
#[pyclass(frozen, name = "ClassPrior")]
struct PyClassPrior {
    inner: baselines::ClassPriorModel,
}

#[pymethods]
impl PyClassPrior {
    #[staticmethod]
    fn fit(datasets: Vec<PyRef<PyDataset>>) -> PyResult<Self> {
        let refs: Vec<&corpus::RelationDataset> = datasets.iter().map(|d| &d.inner).collect();
        Ok(PyClassPrior {
            inner: baselines::ClassPriorModel::fit(refs).map_err(err)?,
        })
    }

    fn predict(&self, fact: &PyFact, vocab: &PyVocabulary) -> PyResult<String> {
        let id = self.inner.predict(&fact.inner).map_err(err)?;
        Ok(vocab.inner.token(id).to_string())
    }
}

/// Aggregate prediction records into per-relation and overall accuracies.
#[pyfunction]
fn evaluate_predictions(
    py: Python<'_>,
    records: Vec<(String, String, String, String, bool, bool)>,
) -> PyResult<Py<PyAny>> {
    let recs: Vec<eval::PredictionRecord> = records
        .into_iter()
        .map(
            |(relation, subject, object, predicted, correct, is_train_majority)| {
                eval::PredictionRecord {
                    relation,
                    subject,
                    object,
                    predicted,
                    predicted_id: 0,
                    correct,
                    is_train_majority,
                }
            },
        )
        .collect();
    let known: BTreeSet<String> = recs.iter().map(|r| r.relation.clone()).collect();
    let report = eval::evaluate(&recs, &known).map_err(err)?;
    let d = pyo3::types::PyDict::new(py);
    let rels = pyo3::types::PyDict::new(py);
    let by_rel: BTreeMap<&String, &eval::RelationEval> = report.relations.iter().collect();
    for (name, e) in by_rel {
        let r = pyo3::types::PyDict::new(py);
        r.set_item("count", e.count)?;
        r.set_item("correct", e.correct)?;
        r.set_item("correct_majority", e.correct_majority)?;
        r.set_item("correct_other", e.correct_other)?;
        r.set_item("accuracy", e.accuracy())?;
        r.set_item("elicitation_rate", e.elicitation_rate())?;
        rels.set_item(name, r)?;
    }
    d.set_item("relations", rels)?;
    d.set_item("relation_mean_accuracy", report.relation_mean_accuracy)?;
    d.set_item("micro_accuracy", report.micro_accuracy)?;
    Ok(d.into())
}

#[pymodule]
fn factprobe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyFact>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTemplate>()?;
    m.add_class::<PyNaiveBayes>()?;
    m.add_class::<PyClassPrior>()?;
    m.add_function(wrap_pyfunction!(train_dense, m)?)?;
    m.add_function(wrap_pyfunction!(train_trigger_search, m)?)?;
    m.add_function(wrap_pyfunction!(finetune, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(mask_logits, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_predictions, m)?)?;
    Ok(())
}
