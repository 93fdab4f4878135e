//! Deterministic training loop: shuffled mini-batches, one backward pass
//! per objective term (so gradient barriers apply), and a byte-stable
//! per-epoch loss log.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_decoding_target, Corpus, DecodingTarget};
use crate::decoder::{TeacherForcing, TeacherForcingConfig};
use crate::error::{Error, Result};
use crate::model::{BatchItem, FeatureHook, IdentityHook, Model};
use crate::params::{Optimizer, ParamStore, UpdateRule};
use crate::rng::substream;
use crate::schema::EventSchema;
use crate::tape::{NodeId, Tape};
use crate::vocab::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Teacher-forcing probability.
    pub rho: f64,
    pub alpha_loss: f64,
    pub beta_loss: f64,
    pub seed: u64,
    pub optimizer: UpdateRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.005,
            rho: 0.8,
            alpha_loss: 1.0,
            beta_loss: 0.1,
            seed: 0,
            optimizer: UpdateRule::adam_default(),
        }
    }
}

/// One numericalized training sentence.
#[derive(Debug, Clone)]
pub struct TrainInstance {
    pub sentence_id: String,
    pub domain: String,
    pub token_ids: Vec<usize>,
    pub tokens: Vec<String>,
    pub target: DecodingTarget,
}

pub use crate::corpus::sentence_id;

/// Numericalize every sentence of a corpus in document order.
pub fn prepare_instances(corpus: &Corpus, vocab: &Vocab, schema: &EventSchema) -> Vec<TrainInstance> {
    let mut out = Vec::with_capacity(corpus.num_sentences());
    for doc in &corpus.documents {
        for (si, sent) in doc.sentences.iter().enumerate() {
            out.push(TrainInstance {
                sentence_id: sentence_id(&doc.id, si),
                domain: doc.domain.clone(),
                token_ids: vocab.encode(&sent.tokens),
                tokens: sent.tokens.clone(),
                target: build_decoding_target(sent, schema),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub j: f64,
    pub l_gen: f64,
    pub l_att: f64,
    pub l_bol: f64,
    pub dev_j: f64,
}

/// Render the log in a stable text form; same-seed runs must reproduce it
/// byte for byte.
pub fn format_loss_log(logs: &[EpochLog]) -> String {
    let mut s = String::new();
    for l in logs {
        s.push_str(&format!(
            "epoch={} J={} gen={} att={} bol={} dev_J={}\n",
            l.epoch, l.j, l.l_gen, l.l_att, l.l_bol, l.dev_j
        ));
    }
    s
}

/// Extra objective evaluated on the batch's raw encoder features (domain
/// classification for PDMT/ADA). Returns a loss node and its weight.
pub trait AuxObjective {
    fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        encodings: &[(NodeId, usize)],
        items: &[&TrainInstance],
    ) -> Result<Option<(NodeId, f64)>>;
}

/// No auxiliary objective.
pub struct NoAux;

impl AuxObjective for NoAux {
    fn loss(
        &self,
        _: &mut Tape,
        _: &ParamStore,
        _: &[(NodeId, usize)],
        _: &[&TrainInstance],
    ) -> Result<Option<(NodeId, f64)>> {
        Ok(None)
    }
}

/// Loss-name tag for auxiliary domain objectives.
pub const LOSS_DOM: &str = "dom";

/// Mean dev-set J under gold-driven tracing (rho = 1), no gradients.
pub fn eval_loss(
    model: &Model,
    store: &ParamStore,
    dev: &[TrainInstance],
    alpha_loss: f64,
    beta_loss: f64,
    batch_size: usize,
    hook: &dyn FeatureHook,
) -> Result<f64> {
    if dev.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for chunk in dev.chunks(batch_size) {
        let mut tape = Tape::new();
        let mut tf = TeacherForcingConfig::new(1.0, 0)?.start();
        let batch: Vec<BatchItem> = chunk
            .iter()
            .map(|inst| BatchItem {
                    token_ids: &inst.token_ids,
                    target: &inst.target,
                    domain: &inst.domain,
                })
            .collect();
        let fwd = model.compute_losses(&mut tape, store, &batch, &mut tf, alpha_loss, beta_loss, hook)?;
        total += fwd.breakdown.j * chunk.len() as f64;
    }
    Ok(total / dev.len() as f64)
}

/// Train in place; returns the per-epoch loss log.
pub fn train(
    model: &Model,
    store: &mut ParamStore,
    train_split: &[TrainInstance],
    dev_split: &[TrainInstance],
    cfg: &TrainConfig,
    hook: &dyn FeatureHook,
    aux: &dyn AuxObjective,
) -> Result<Vec<EpochLog>> {
    if train_split.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("epochs and batch size must be positive"));
    }
    let tf_cfg = TeacherForcingConfig::new(cfg.rho, cfg.seed)?;
    let mut tf: TeacherForcing = tf_cfg.start();
    let mut shuffle_rng = substream(cfg.seed, "shuffle");
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, store)?;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let n = train_split.len() as f64;
    let mut order: Vec<usize> = (0..train_split.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for batch_idx in order.chunks(cfg.batch_size) {
            let items: Vec<&TrainInstance> = batch_idx.iter().map(|&i| &train_split[i]).collect();
            let batch: Vec<BatchItem> = items
                .iter()
                .map(|inst| BatchItem {
                    token_ids: &inst.token_ids,
                    target: &inst.target,
                    domain: &inst.domain,
                })
                .collect();
            let mut tape = Tape::new();
            let fwd = model.compute_losses(
                &mut tape,
                store,
                &batch,
                &mut tf,
                cfg.alpha_loss,
                cfg.beta_loss,
                hook,
            )?;
            if !fwd.breakdown.j.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("non-finite batch loss {:?}", fwd.breakdown),
                });
            }
            store.zero_grads();
            model.accumulate_gradients(&tape, store, &fwd.losses, cfg.alpha_loss, cfg.beta_loss)?;
            if let Some((aux_node, weight)) = aux.loss(&mut tape, store, &fwd.encodings, &items)? {
                let g = tape.backward(aux_node, store, LOSS_DOM)?;
                store.accumulate(&g, weight);
            }
            optimizer.step(store);
            let w = batch.len() as f64;
            sums.0 += fwd.breakdown.j * w;
            sums.1 += fwd.breakdown.l_gen * w;
            sums.2 += fwd.breakdown.l_att * w;
            sums.3 += fwd.breakdown.l_bol * w;
        }
        let dev_j = eval_loss(
            model,
            store,
            dev_split,
            cfg.alpha_loss,
            cfg.beta_loss,
            cfg.batch_size,
            hook,
        )?;
        logs.push(EpochLog {
            epoch,
            j: sums.0 / n,
            l_gen: sums.1 / n,
            l_att: sums.2 / n,
            l_bol: sums.3 / n,
            dev_j,
        });
    }
    Ok(logs)
}

/// Convenience wrapper with no feature hook or auxiliary objective.
pub fn train_plain(
    model: &Model,
    store: &mut ParamStore,
    train_split: &[TrainInstance],
    dev_split: &[TrainInstance],
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    train(model, store, train_split, dev_split, cfg, &IdentityHook, &NoAux)
}
