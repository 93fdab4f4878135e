//! Multi-domain training strategies: single-domain (SD), pooled (PD),
//! pooled with a domain-classification side task (PDMT), shared-private
//! feature extraction (MDSP), and unsupervised adversarial domain
//! adaptation (ADA) with a gradient-reversal layer.

use std::cell::Cell;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::infer::{predict_corpus, tune_threshold, TuneMode};
use crate::metrics::EvalReport;
use crate::model::{FeatureHook, IdentityHook, Model};
use crate::params::{ParamId, ParamStore};
use crate::rng::substream;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::train::{
    prepare_instances, train, AuxObjective, EpochLog, NoAux, TrainConfig, TrainInstance,
};
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Sd,
    Pd,
    Pdmt,
    Mdsp,
    Ada,
}

/// How MDSP combines the shared and private transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineRule {
    Concat,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// Declared domains; order fixes the classifier's class indices. For
    /// ADA this is [labeled source, unlabeled target].
    pub domains: Vec<String>,
    pub lambda_dom: f64,
    pub lambda_grl: f64,
    pub shared_dim: usize,
    pub private_dim: usize,
    pub combine: CombineRule,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy, domains: Vec<String>) -> Self {
        StrategyConfig {
            strategy,
            domains,
            lambda_dom: 0.1,
            lambda_grl: 1.0,
            shared_dim: 0,
            private_dim: 0,
            combine: CombineRule::Concat,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::invalid("strategy config declares no domains"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.domains {
            if d.is_empty() {
                return Err(Error::invalid("empty domain name"));
            }
            if !seen.insert(d.as_str()) {
                return Err(Error::invalid(format!("duplicate domain {d:?}")));
            }
        }
        if self.lambda_dom < 0.0 || self.lambda_grl < 0.0 {
            return Err(Error::invalid("loss weights must be nonnegative"));
        }
        match self.strategy {
            Strategy::Sd if self.domains.len() != 1 => {
                Err(Error::invalid("SD takes exactly one target domain"))
            }
            Strategy::Ada if self.domains.len() != 2 => Err(Error::invalid(
                "ADA takes exactly one labeled source and one unlabeled target domain",
            )),
            Strategy::Pdmt if self.domains.len() < 2 => {
                Err(Error::invalid("PDMT needs at least two domains to classify"))
            }
            Strategy::Mdsp if self.shared_dim == 0 || self.private_dim == 0 => {
                Err(Error::invalid("MDSP needs positive shared and private widths"))
            }
            _ => Ok(()),
        }
    }
}

/// Shared-private feature heads: every encoder row h is replaced by
/// combine(tanh(h W_s), tanh(h W_p^dom)) with a private map per domain.
pub struct MdspHook {
    pub shared: ParamId,
    pub private: BTreeMap<String, ParamId>,
    pub combine: CombineRule,
}

impl MdspHook {
    pub fn new(
        store: &mut ParamStore,
        domains: &[String],
        d_h: usize,
        shared_dim: usize,
        private_dim: usize,
        combine: CombineRule,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Self> {
        let width = 2 * d_h;
        match combine {
            CombineRule::Concat if shared_dim + private_dim != width => {
                return Err(Error::shape(
                    "mdsp",
                    format!(
                        "shared ({shared_dim}) + private ({private_dim}) widths must equal the decoder input width {width}"
                    ),
                ));
            }
            CombineRule::Sum if shared_dim != width || private_dim != width => {
                return Err(Error::shape(
                    "mdsp",
                    format!("summed heads must both have the decoder input width {width}"),
                ));
            }
            _ => {}
        }
        let shared = store.insert_xavier("mdsp.shared", width, shared_dim, rng);
        let mut private = BTreeMap::new();
        for d in domains {
            private.insert(
                d.clone(),
                store.insert_xavier(&format!("mdsp.private.{d}"), width, private_dim, rng),
            );
        }
        Ok(MdspHook { shared, private, combine })
    }

    /// Rebind to head parameters already present in a store (after
    /// checkpoint restoration); widths come from the stored tensors.
    pub fn attach(store: &ParamStore, domains: &[String], combine: CombineRule) -> Result<Self> {
        let shared = store
            .id("mdsp.shared")
            .ok_or_else(|| Error::invalid("store holds no mdsp.shared parameter"))?;
        let mut private = BTreeMap::new();
        for d in domains {
            let name = format!("mdsp.private.{d}");
            let id = store
                .id(&name)
                .ok_or_else(|| Error::invalid(format!("store holds no {name} parameter")))?;
            private.insert(d.clone(), id);
        }
        Ok(MdspHook { shared, private, combine })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.shared];
        ids.extend(self.private.values().copied());
        ids
    }
}

impl FeatureHook for MdspHook {
    fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: NodeId,
        n: usize,
        domain: &str,
    ) -> Result<NodeId> {
        let private = *self
            .private
            .get(domain)
            .ok_or_else(|| Error::invalid(format!("unknown domain tag {domain:?}")))?;
        let ws = tape.param(store, self.shared);
        let wp = tape.param(store, private);
        let hs_lin = tape.matmul(h, ws)?;
        let hs = tape.tanh(hs_lin)?;
        let hp_lin = tape.matmul(h, wp)?;
        let hp = tape.tanh(hp_lin)?;
        match self.combine {
            CombineRule::Sum => tape.add(hs, hp),
            CombineRule::Concat => {
                let mut rows = Vec::with_capacity(n + 2);
                for r in 0..n + 2 {
                    let a = tape.row(hs, r)?;
                    let b = tape.row(hp, r)?;
                    rows.push(tape.concat(&[a, b])?);
                }
                tape.stack_rows(&rows)
            }
        }
    }
}

/// Gradient-reversal layer: identity forward, gradient scaled by
/// -lambda_grl on the way back into the features.
pub fn gradient_reversal(tape: &mut Tape, features: NodeId, lambda_grl: f64) -> Result<NodeId> {
    if lambda_grl < 0.0 {
        return Err(Error::invalid(format!(
            "gradient-reversal coefficient must be nonnegative, got {lambda_grl}"
        )));
    }
    tape.grad_reverse(features, lambda_grl)
}

/// Mean of the encoder rows excluding the two sentinels, realized as a
/// constant-weight matmul so gradients flow back into H.
pub fn mean_pool(tape: &mut Tape, h: NodeId, n: usize) -> Result<NodeId> {
    let mut w = vec![0.0; n + 2];
    for v in w.iter_mut().skip(1).take(n) {
        *v = 1.0 / n as f64;
    }
    let weights = tape.constant(Tensor::vector(w));
    tape.matmul(weights, h)
}

/// Linear domain classifier over mean-pooled sentence features.
pub struct DomainClassifier {
    pub w: ParamId,
    pub domains: Vec<String>,
}

impl DomainClassifier {
    pub fn new(
        store: &mut ParamStore,
        domains: Vec<String>,
        d_h: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Self {
        let w = store.insert_xavier("dom.classifier", 2 * d_h, domains.len(), rng);
        DomainClassifier { w, domains }
    }

    pub fn domain_index(&self, name: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d == name)
            .ok_or_else(|| Error::invalid(format!("unknown domain tag {name:?}")))
    }

    /// Domain logits for one sentence; `reverse` routes the pooled feature
    /// through a gradient-reversal layer first.
    pub fn logits(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: NodeId,
        n: usize,
        reverse: Option<f64>,
    ) -> Result<NodeId> {
        let pooled = mean_pool(tape, h, n)?;
        let feat = match reverse {
            Some(l) => gradient_reversal(tape, pooled, l)?,
            None => pooled,
        };
        let w = tape.param(store, self.w);
        tape.matmul(feat, w)
    }

    /// Cross-entropy of the classifier against the sentence's domain.
    pub fn cross_entropy(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: NodeId,
        n: usize,
        domain: &str,
        reverse: Option<f64>,
    ) -> Result<NodeId> {
        let idx = self.domain_index(domain)?;
        let logits = self.logits(tape, store, h, n, reverse)?;
        let p = tape.softmax(logits)?;
        let target = tape.constant(Tensor::one_hot(self.domains.len(), idx));
        tape.kl_div(target, p)
    }

    /// Hard domain decision, useful for tracking how discriminative the
    /// features remain.
    pub fn predict(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: NodeId,
        n: usize,
    ) -> Result<usize> {
        let logits = self.logits(tape, store, h, n, None)?;
        Ok(tape.value(logits).argmax())
    }
}

/// Domain classification cross-entropy over mean-pooled encoder rows.
pub fn domain_aux_loss(
    tape: &mut Tape,
    store: &ParamStore,
    classifier: &DomainClassifier,
    h: NodeId,
    n: usize,
    domain: &str,
) -> Result<NodeId> {
    classifier.cross_entropy(tape, store, h, n, domain, None)
}

/// PDMT side objective: mean domain cross-entropy over the batch.
pub struct DomainCeObjective {
    pub classifier: DomainClassifier,
    pub lambda_dom: f64,
    /// `Some(lambda_grl)` reverses gradients into the encoder (ADA).
    pub reverse: Option<f64>,
}

impl AuxObjective for DomainCeObjective {
    fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        encodings: &[(NodeId, usize)],
        items: &[&TrainInstance],
    ) -> Result<Option<(NodeId, f64)>> {
        if self.lambda_dom == 0.0 {
            return Ok(None);
        }
        let mut total: Option<NodeId> = None;
        for ((h, n), item) in encodings.iter().zip(items) {
            let ce = self
                .classifier
                .cross_entropy(tape, store, *h, *n, &item.domain, self.reverse)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, ce)?,
                None => ce,
            });
        }
        let mean = tape.scale(total.expect("nonempty batch"), 1.0 / encodings.len() as f64)?;
        Ok(Some((mean, self.lambda_dom)))
    }
}

/// Optional gradient-reversal schedule: batch ordinal -> lambda_grl.
pub type GrlSchedule = Box<dyn Fn(usize) -> f64>;

/// ADA objective: reversed domain cross-entropy over the labeled source
/// batch plus an equally sized slice of unlabeled target sentences.
pub struct AdaObjective {
    pub classifier: DomainClassifier,
    encoder: Encoder,
    target_ids: Vec<Vec<usize>>,
    target_domain: String,
    lambda_dom: f64,
    lambda_grl: f64,
    /// Overrides the constant coefficient when set; empty by default so
    /// the reversal strength stays fixed across epochs.
    pub schedule: Option<GrlSchedule>,
    cursor: Cell<usize>,
    calls: Cell<usize>,
}

impl AdaObjective {
    pub fn new(
        classifier: DomainClassifier,
        encoder: Encoder,
        target_ids: Vec<Vec<usize>>,
        target_domain: String,
        lambda_dom: f64,
        lambda_grl: f64,
    ) -> Self {
        AdaObjective {
            classifier,
            encoder,
            target_ids,
            target_domain,
            lambda_dom,
            lambda_grl,
            schedule: None,
            cursor: Cell::new(0),
            calls: Cell::new(0),
        }
    }
}

impl AuxObjective for AdaObjective {
    fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        encodings: &[(NodeId, usize)],
        items: &[&TrainInstance],
    ) -> Result<Option<(NodeId, f64)>> {
        if self.lambda_dom == 0.0 {
            return Ok(None);
        }
        let call = self.calls.get();
        self.calls.set(call + 1);
        let lam = self.schedule.as_ref().map(|f| f(call)).unwrap_or(self.lambda_grl);
        let mut total: Option<NodeId> = None;
        let mut count = 0usize;
        for ((h, n), item) in encodings.iter().zip(items) {
            let ce = self
                .classifier
                .cross_entropy(tape, store, *h, *n, &item.domain, Some(lam))?;
            total = Some(match total {
                Some(acc) => tape.add(acc, ce)?,
                None => ce,
            });
            count += 1;
        }
        // Cycle through the unlabeled target sentences, one per source
        // sentence in the batch.
        for _ in 0..encodings.len().min(self.target_ids.len()) {
            let i = self.cursor.get();
            self.cursor.set((i + 1) % self.target_ids.len());
            let enc = self.encoder.encode(tape, store, &self.target_ids[i])?;
            let ce = self.classifier.cross_entropy(
                tape,
                store,
                enc.h,
                enc.n,
                &self.target_domain,
                Some(lam),
            )?;
            total = Some(match total {
                Some(acc) => tape.add(acc, ce)?,
                None => ce,
            });
            count += 1;
        }
        let mean = tape.scale(total.expect("nonempty batch"), 1.0 / count as f64)?;
        Ok(Some((mean, self.lambda_dom)))
    }
}

/// Materialized training plan: the (possibly filtered) corpus, the feature
/// transform, and any extra loss.
pub struct TrainingPlan {
    pub corpus: Corpus,
    pub hook: Box<dyn FeatureHook>,
    pub aux: Box<dyn AuxObjective>,
}

/// Instantiate a strategy over a corpus: SD filters the data, PD is the
/// identity, PDMT adds the domain side task, MDSP swaps in shared-private
/// features. ADA trains through `run_uda` instead.
pub fn apply_strategy(
    store: &mut ParamStore,
    d_h: usize,
    corpus: &Corpus,
    config: &StrategyConfig,
    seed: u64,
) -> Result<TrainingPlan> {
    config.validate()?;
    let present = corpus.domains();
    for d in &present {
        if !config.domains.contains(d) {
            return Err(Error::invalid(format!("unknown domain tag {d:?} in corpus")));
        }
    }
    let mut rng = substream(seed, "strategy");
    match config.strategy {
        Strategy::Sd => {
            let only = &config.domains[0];
            if !present.contains(only) {
                return Err(Error::invalid(format!("domain {only:?} absent from corpus")));
            }
            let filtered = Corpus {
                documents: corpus
                    .documents
                    .iter()
                    .filter(|d| &d.domain == only)
                    .cloned()
                    .collect(),
            };
            Ok(TrainingPlan { corpus: filtered, hook: Box::new(IdentityHook), aux: Box::new(NoAux) })
        }
        Strategy::Pd => Ok(TrainingPlan {
            corpus: corpus.clone(),
            hook: Box::new(IdentityHook),
            aux: Box::new(NoAux),
        }),
        Strategy::Pdmt => {
            let classifier = DomainClassifier::new(store, config.domains.clone(), d_h, &mut rng);
            Ok(TrainingPlan {
                corpus: corpus.clone(),
                hook: Box::new(IdentityHook),
                aux: Box::new(DomainCeObjective {
                    classifier,
                    lambda_dom: config.lambda_dom,
                    reverse: None,
                }),
            })
        }
        Strategy::Mdsp => {
            let hook = MdspHook::new(
                store,
                &config.domains,
                d_h,
                config.shared_dim,
                config.private_dim,
                config.combine,
                &mut rng,
            )?;
            Ok(TrainingPlan { corpus: corpus.clone(), hook: Box::new(hook), aux: Box::new(NoAux) })
        }
        Strategy::Ada => Err(Error::invalid(
            "adversarial adaptation pairs a labeled and an unlabeled corpus; use run_uda",
        )),
    }
}

/// Drop every mention so a split can serve as unlabeled adaptation data.
pub fn strip_labels(corpus: &Corpus) -> Corpus {
    let mut out = corpus.clone();
    for doc in &mut out.documents {
        for s in &mut doc.sentences {
            s.mentions.clear();
        }
    }
    out
}

fn assert_unlabeled(corpus: &Corpus) {
    for doc in &corpus.documents {
        for s in &doc.sentences {
            assert!(
                s.mentions.is_empty(),
                "target labels must not leak into adaptation training (document {})",
                doc.id
            );
        }
    }
}

#[derive(Debug, Clone)]
pub struct UdaSplits<'a> {
    pub source_train: &'a Corpus,
    pub source_dev: &'a Corpus,
    pub source_test: &'a Corpus,
    /// Unlabeled; any mention here is treated as a label leak.
    pub target_train: &'a Corpus,
    pub target_test: &'a Corpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdaReport {
    pub logs: Vec<EpochLog>,
    pub tau: f64,
    pub in_domain: EvalReport,
    pub out_of_domain: EvalReport,
    /// (stage, domain-classifier accuracy on held-out sentences); recorded
    /// for inspection, no trend asserted.
    pub classifier_accuracy: Vec<(String, f64)>,
}

fn classifier_accuracy(
    encoder: &Encoder,
    store: &ParamStore,
    classifier: &DomainClassifier,
    vocab: &Vocab,
    corpora: &[(&Corpus, &str)],
) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (corpus, domain) in corpora {
        let idx = classifier.domain_index(domain)?;
        for (_, sent) in corpus.sentences() {
            let mut tape = Tape::new();
            let enc = encoder.encode(&mut tape, store, &vocab.encode(&sent.tokens))?;
            if classifier.predict(&mut tape, store, enc.h, enc.n)? == idx {
                hits += 1;
            }
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Unsupervised domain adaptation: train on the labeled source with the
/// reversed domain loss over source and (unlabeled) target sentences, then
/// evaluate in-domain (source test) and out-of-domain (target test).
#[allow(clippy::too_many_arguments)]
pub fn run_uda(
    model: &Model,
    store: &mut ParamStore,
    splits: &UdaSplits<'_>,
    vocab: &Vocab,
    config: &StrategyConfig,
    train_cfg: &TrainConfig,
    width: usize,
    max_len: usize,
) -> Result<UdaReport> {
    config.validate()?;
    if config.strategy != Strategy::Ada {
        return Err(Error::invalid("run_uda requires the ADA strategy"));
    }
    let source = config.domains[0].clone();
    let target = config.domains[1].clone();
    for d in splits.source_train.domains() {
        if d != source {
            return Err(Error::invalid(format!("source split carries domain {d:?}")));
        }
    }
    for d in splits.target_train.domains() {
        if d != target {
            return Err(Error::invalid(format!("target split carries domain {d:?}")));
        }
    }
    assert_unlabeled(splits.target_train);

    let schema = &model.cfg.schema;
    let mut rng = substream(train_cfg.seed, "strategy");
    let classifier =
        DomainClassifier::new(store, config.domains.clone(), model.cfg.d_h, &mut rng);
    let target_ids: Vec<Vec<usize>> = splits
        .target_train
        .sentences()
        .map(|(_, s)| vocab.encode(&s.tokens))
        .collect();
    let aux = AdaObjective::new(
        classifier,
        model.encoder.clone(),
        target_ids,
        target.clone(),
        config.lambda_dom,
        config.lambda_grl,
    );

    let train_split = prepare_instances(splits.source_train, vocab, schema);
    let dev_split = prepare_instances(splits.source_dev, vocab, schema);

    let held_out = [(splits.source_test, source.as_str()), (splits.target_test, target.as_str())];
    let mut accuracy = vec![(
        "pre".to_string(),
        classifier_accuracy(&model.encoder, store, &aux.classifier, vocab, &held_out)?,
    )];
    let logs = train(model, store, &train_split, &dev_split, train_cfg, &IdentityHook, &aux)?;
    accuracy.push((
        "post".to_string(),
        classifier_accuracy(&model.encoder, store, &aux.classifier, vocab, &held_out)?,
    ));

    let tuned = tune_threshold(
        model,
        store,
        &IdentityHook,
        splits.source_dev,
        vocab,
        width,
        max_len,
        TuneMode::Classification,
    )?;
    let in_preds = predict_corpus(
        model, store, &IdentityHook, splits.source_test, vocab, width, max_len, tuned.tau,
    )?;
    let out_preds = predict_corpus(
        model, store, &IdentityHook, splits.target_test, vocab, width, max_len, tuned.tau,
    )?;
    Ok(UdaReport {
        logs,
        tau: tuned.tau,
        in_domain: crate::metrics::score(splits.source_test, &in_preds)?,
        out_of_domain: crate::metrics::score(splits.target_test, &out_preds)?,
        classifier_accuracy: accuracy,
    })
}
