//! Python bindings: the synthetic-corpus / train / tune / predict / evaluate
//! pipeline plus the corpus analytics, mirroring the CLI surface. Everything
//! operates over the default event schema; shared-private and adversarial
//! strategies stay on the Rust/CLI side.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use edseq_core::checkpoint::{load_checkpoint, restore_model, save_checkpoint};
use edseq_core::corpus::{load_corpus, split_corpus, sentence_id};
use edseq_core::decoder::MaskVariant;
use edseq_core::infer::{
    load_predictions, predict_corpus, save_predictions, tune_threshold, TuneMode,
};
use edseq_core::metrics::{avg_wasserstein, cohen_kappa, corpus_stats, score, TaskScore};
use edseq_core::model::{IdentityHook, ModelConfig};
use edseq_core::params::{ParamStore, UpdateRule};
use edseq_core::schema::EventSchema;
use edseq_core::synth::{generate_synthetic_corpus, SynthSpec};
use edseq_core::train::{format_loss_log, prepare_instances, train_plain, TrainConfig};
use edseq_core::vocab::Vocab;

fn err(e: edseq_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn task_dict<'py>(py: Python<'py>, t: &TaskScore) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("tp", t.tp)?;
    d.set_item("fp", t.fp)?;
    d.set_item("fn", t.fn_)?;
    d.set_item("precision", t.precision)?;
    d.set_item("recall", t.recall)?;
    d.set_item("f1", t.f1)?;
    Ok(d)
}

fn pair_dict<'py>(
    py: Python<'py>,
    map: &std::collections::BTreeMap<String, (TaskScore, TaskScore)>,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (key, (id, cls)) in map {
        let entry = PyDict::new(py);
        entry.set_item("identification", task_dict(py, id)?)?;
        entry.set_item("classification", task_dict(py, cls)?)?;
        d.set_item(key, entry)?;
    }
    Ok(d)
}

/// A multi-domain document collection over the default event schema.
#[pyclass(name = "Corpus")]
struct PyCorpus {
    inner: edseq_core::corpus::Corpus,
    schema: EventSchema,
}

#[pymethods]
impl PyCorpus {
    /// Generate the deterministic synthetic corpus (three domains with
    /// disjoint trigger lexicons).
    #[staticmethod]
    #[pyo3(signature = (docs_per_domain=100, seed=7))]
    fn synth(docs_per_domain: usize, seed: u64) -> PyResult<Self> {
        let spec = SynthSpec::standard(docs_per_domain);
        let inner = generate_synthetic_corpus(seed, &spec).map_err(err)?;
        Ok(PyCorpus { inner, schema: spec.schema })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let schema = EventSchema::default();
        let inner = load_corpus(path, &schema).map_err(err)?;
        Ok(PyCorpus { inner, schema })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.documents.len()
    }

    fn num_sentences(&self) -> usize {
        self.inner.num_sentences()
    }

    fn domains(&self) -> Vec<String> {
        self.inner.domains()
    }

    /// Event-type names of the schema, in index order.
    fn types(&self) -> Vec<String> {
        self.schema.types().to_vec()
    }

    /// Keep only documents from the given domains.
    fn restrict(&self, domains: Vec<String>) -> PyResult<Self> {
        let documents: Vec<_> = self
            .inner
            .documents
            .iter()
            .filter(|d| domains.iter().any(|x| x == &d.domain))
            .cloned()
            .collect();
        if documents.is_empty() {
            return Err(PyValueError::new_err(format!(
                "no documents left after restricting to {domains:?}"
            )));
        }
        Ok(PyCorpus {
            inner: edseq_core::corpus::Corpus { documents },
            schema: self.schema.clone(),
        })
    }

    /// Deterministic 80/10/10 document split -> (train, dev, test).
    fn split(&self, seed: u64) -> PyResult<(Self, Self, Self)> {
        let (tr, dv, te, _) = split_corpus(&self.inner, seed).map_err(err)?;
        let wrap = |inner| PyCorpus { inner, schema: self.schema.clone() };
        Ok((wrap(tr), wrap(dv), wrap(te)))
    }

    /// Trigger-length buckets, multi-event proportions, per-domain event
    /// density and sentence length, with cross-domain spreads.
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = corpus_stats(&self.inner);
        let d = PyDict::new(py);
        let buckets = PyDict::new(py);
        for (name, i) in [("1_2", 0usize), ("3_4", 1), ("5_plus", 2)] {
            let b = PyDict::new(py);
            b.set_item("count", s.trigger_len_counts[i])?;
            b.set_item("share", s.trigger_len_shares[i])?;
            buckets.set_item(name, b)?;
        }
        d.set_item("trigger_len", buckets)?;
        d.set_item("multi_event_proportion", s.multi_event_proportion)?;
        d.set_item("multi_event_proportion_all", s.multi_event_proportion_all)?;
        d.set_item("event_density", s.event_density.clone())?;
        d.set_item("event_density_std", s.event_density_std)?;
        d.set_item("mean_sentence_len", s.mean_sentence_len.clone())?;
        d.set_item("sentence_len_std", s.sentence_len_std)?;
        Ok(d)
    }

    /// Cross-domain heterogeneity: per-domain type distributions, pairwise
    /// and average Wasserstein distances, event densities.
    fn heterogeneity<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let h = avg_wasserstein(&self.inner, &self.schema).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("domains", h.domains.clone())?;
        d.set_item("distributions", h.distributions.clone())?;
        d.set_item("pairwise", h.pairwise.clone())?;
        d.set_item("avg_wasserstein", h.avg_wasserstein)?;
        d.set_item("event_density", h.event_density.clone())?;
        d.set_item("event_density_std", h.event_density_std)?;
        Ok(d)
    }

    /// Gold annotations in prediction form (useful for scorer sanity checks).
    fn gold_predictions(&self) -> PyPredictions {
        let mut out = Vec::new();
        for doc in &self.inner.documents {
            for (si, sent) in doc.sentences.iter().enumerate() {
                out.push(edseq_core::infer::Prediction {
                    id: sentence_id(&doc.id, si),
                    events: sent
                        .mentions
                        .iter()
                        .map(|m| edseq_core::infer::PredictedEvent {
                            type_name: m.type_name.clone(),
                            start: m.start,
                            end: m.end,
                        })
                        .collect(),
                });
            }
        }
        PyPredictions { inner: out }
    }
}

/// Per-sentence predicted events, JSONL-serializable.
#[pyclass(name = "Predictions")]
struct PyPredictions {
    inner: Vec<edseq_core::infer::Prediction>,
}

#[pymethods]
impl PyPredictions {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyPredictions { inner: load_predictions(path).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_predictions(&self.inner, path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn to_list<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let out = PyList::empty(py);
        for p in &self.inner {
            let d = PyDict::new(py);
            d.set_item("id", &p.id)?;
            let events = PyList::empty(py);
            for e in &p.events {
                let ev = PyDict::new(py);
                ev.set_item("type", &e.type_name)?;
                ev.set_item("start", e.start)?;
                ev.set_item("end", e.end)?;
                events.append(ev)?;
            }
            d.set_item("events", events)?;
            out.append(d)?;
        }
        Ok(out)
    }
}

/// Trained generator: label-sequence decoder plus tracing attention.
#[pyclass(name = "Model")]
struct PyModel {
    model: edseq_core::model::Model,
    store: ParamStore,
    vocab: Vocab,
}

#[pymethods]
impl PyModel {
    /// Train on `train`, tracking dev loss; returns (model, loss_log_text).
    #[staticmethod]
    #[pyo3(signature = (train, dev, *, epochs=30, batch_size=16, learning_rate=0.005,
        rho=0.8, alpha_loss=1.0, beta_loss=0.1, optimizer="adam",
        d_emb=32, d_h=32, s_dim=64, d_lab=16, mask_variant="one_hot", seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        train: &PyCorpus,
        dev: &PyCorpus,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        rho: f64,
        alpha_loss: f64,
        beta_loss: f64,
        optimizer: &str,
        d_emb: usize,
        d_h: usize,
        s_dim: usize,
        d_lab: usize,
        mask_variant: &str,
        seed: u64,
    ) -> PyResult<(PyModel, String)> {
        let mask_variant = match mask_variant {
            "one_hot" => MaskVariant::OneHot,
            "elementwise" => MaskVariant::Elementwise,
            other => {
                return Err(PyValueError::new_err(format!(
                    "mask_variant must be \"one_hot\" or \"elementwise\", got {other:?}"
                )))
            }
        };
        let optimizer = match optimizer {
            "adam" => UpdateRule::adam_default(),
            "sgd" => UpdateRule::Sgd,
            other => {
                return Err(PyValueError::new_err(format!(
                    "optimizer must be \"adam\" or \"sgd\", got {other:?}"
                )))
            }
        };
        let vocab = Vocab::build(&train.inner).map_err(err)?;
        let cfg = ModelConfig {
            schema: train.schema.clone(),
            vocab_size: vocab.len(),
            d_emb,
            d_h,
            s_dim,
            d_lab,
            mask_variant,
        };
        let mut store = ParamStore::new();
        let model = edseq_core::model::Model::new(&mut store, cfg, seed);
        let tr = prepare_instances(&train.inner, &vocab, &train.schema);
        let dv = prepare_instances(&dev.inner, &vocab, &train.schema);
        let tcfg = TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            rho,
            alpha_loss,
            beta_loss,
            seed,
            optimizer,
        };
        let logs = train_plain(&model, &mut store, &tr, &dv, &tcfg).map_err(err)?;
        Ok((PyModel { model, store, vocab }, format_loss_log(&logs)))
    }

    /// Pick tau* on the dev split; returns (tau, [(tau, f1), ...]).
    #[pyo3(signature = (dev, mode="classification", beam_width=4, max_len=8))]
    fn tune_threshold(
        &self,
        dev: &PyCorpus,
        mode: &str,
        beam_width: usize,
        max_len: usize,
    ) -> PyResult<(f64, Vec<(f64, f64)>)> {
        let mode = match mode {
            "identification" => TuneMode::Identification,
            "classification" => TuneMode::Classification,
            other => {
                return Err(PyValueError::new_err(format!(
                    "mode must be \"identification\" or \"classification\", got {other:?}"
                )))
            }
        };
        let out = tune_threshold(
            &self.model,
            &self.store,
            &IdentityHook,
            &dev.inner,
            &self.vocab,
            beam_width,
            max_len,
            mode,
        )
        .map_err(err)?;
        Ok((out.tau, out.grid))
    }

    #[pyo3(signature = (corpus, tau=0.3, beam_width=4, max_len=8))]
    fn predict(
        &self,
        corpus: &PyCorpus,
        tau: f64,
        beam_width: usize,
        max_len: usize,
    ) -> PyResult<PyPredictions> {
        let inner = predict_corpus(
            &self.model,
            &self.store,
            &IdentityHook,
            &corpus.inner,
            &self.vocab,
            beam_width,
            max_len,
            tau,
        )
        .map_err(err)?;
        Ok(PyPredictions { inner })
    }

    /// Persist as (checkpoint JSON, vocab text) pair.
    fn save(&self, checkpoint: &str, vocab: &str) -> PyResult<()> {
        save_checkpoint(checkpoint, &self.model.cfg, &self.store).map_err(err)?;
        self.vocab.save(vocab).map_err(err)
    }

    #[staticmethod]
    fn load(checkpoint: &str, vocab: &str) -> PyResult<Self> {
        let file = load_checkpoint(checkpoint).map_err(err)?;
        let (store, model) = restore_model(&file).map_err(err)?;
        if store.id("mdsp.shared").is_some() {
            return Err(PyValueError::new_err(
                "checkpoint holds shared-private head parameters; decode it with the CLI",
            ));
        }
        let vocab = Vocab::load(vocab).map_err(err)?;
        if vocab.len() != model.cfg.vocab_size {
            return Err(PyValueError::new_err(format!(
                "vocab has {} entries but the checkpoint expects {}",
                vocab.len(),
                model.cfg.vocab_size
            )));
        }
        Ok(PyModel { model, store, vocab })
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn num_parameters(&self) -> usize {
        self.store.iter().map(|(_, p)| p.value.numel()).sum()
    }
}

/// Span-based micro scores: identification and classification P/R/F1 with
/// per-domain, per-bucket (1/1 vs 1/N) and per-type breakdowns.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    gold: &PyCorpus,
    predictions: &PyPredictions,
) -> PyResult<Bound<'py, PyDict>> {
    let report = score(&gold.inner, &predictions.inner).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("identification", task_dict(py, &report.identification)?)?;
    d.set_item("classification", task_dict(py, &report.classification)?)?;
    d.set_item("domain", pair_dict(py, &report.per_domain)?)?;
    d.set_item("bucket", pair_dict(py, &report.per_bucket)?)?;
    let types = PyDict::new(py);
    for (name, t) in &report.per_type {
        types.set_item(name, task_dict(py, t)?)?;
    }
    d.set_item("type", types)?;
    Ok(d)
}

/// Cohen's kappa between two equally long annotation sequences.
#[pyfunction(name = "cohen_kappa")]
fn kappa(a: Vec<String>, b: Vec<String>) -> PyResult<f64> {
    cohen_kappa(&a, &b).map_err(err)
}

#[pymodule]
fn edseq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyPredictions>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(kappa, m)?)?;
    Ok(())
}
