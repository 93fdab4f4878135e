//! Inference: beam-search generation of label sequences, attention-threshold
//! trigger tracing, prediction files, and dev-set threshold tuning.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{sentence_id, Corpus};
use crate::decoder::TeacherForcingConfig;
use crate::error::{Error, Result};
use crate::model::{FeatureHook, Model};
use crate::params::ParamStore;
use crate::schema::EventSchema;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::vocab::Vocab;

/// Floor for log-probabilities so force-terminated paths never become -inf.
const LOG_FLOOR: f64 = 1e-300;

/// The dev-tuning grid for the tracing threshold.
pub const TAU_GRID: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// One beam-search output: a label sequence ending with EOS, its cumulative
/// (length-unnormalized) log-probability, and the preliminary attention
/// vector recorded at every step.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub labels: Vec<usize>,
    pub log_prob: f64,
    pub attentions: Vec<Tensor>,
    pub finished: bool,
}

#[derive(Debug, Clone)]
struct Beam {
    labels: Vec<usize>,
    log_prob: f64,
    attentions: Vec<Tensor>,
    state: crate::decoder::DecoderState,
    y_prev: usize,
}

fn rank(items: &mut [impl std::borrow::Borrow<Hypothesis>]) {
    items.sort_by(|a, b| {
        let (a, b) = (a.borrow(), b.borrow());
        b.log_prob
            .partial_cmp(&a.log_prob)
            .expect("log-probabilities are finite")
            .then_with(|| a.labels.cmp(&b.labels))
    });
}

/// Beam search over label sequences. Expansion covers every label except
/// BOS; EOS expansions move to the finished set; beams still live at
/// `max_len` are force-terminated with EOS at that step's EOS
/// log-probability. Finished hypotheses are ranked by raw log-probability,
/// ties broken by lexicographic label order.
pub fn beam_search(
    model: &Model,
    tape: &mut Tape,
    store: &ParamStore,
    h_enc: NodeId,
    width: usize,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    if width == 0 {
        return Err(Error::invalid("beam width must be at least 1"));
    }
    if max_len < 2 {
        return Err(Error::invalid("max_len must be at least 2"));
    }
    let schema = &model.cfg.schema;
    let (bos, eos) = (schema.bos_id(), schema.eos_id());
    // Inference never consults the teacher-forcing stream (no gold index).
    let mut tf = TeacherForcingConfig::new(0.0, 0)?.start();

    let mut live = vec![Beam {
        labels: Vec::new(),
        log_prob: 0.0,
        attentions: Vec::new(),
        state: model.decoder.init_state(tape),
        y_prev: bos,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for round in 1..=max_len {
        let mut expanded: Vec<Beam> = Vec::new();
        for beam in &live {
            let mut state = beam.state;
            let step = model
                .decoder
                .step(tape, store, h_enc, &mut state, beam.y_prev, None, &mut tf)?;
            let att = tape.value(step.alpha_hat).clone();
            let logs: Vec<f64> = tape
                .value(step.y)
                .data()
                .iter()
                .map(|&p| p.max(LOG_FLOOR).ln())
                .collect();
            if round == max_len {
                let mut labels = beam.labels.clone();
                labels.push(eos);
                let mut attentions = beam.attentions.clone();
                attentions.push(att);
                finished.push(Hypothesis {
                    labels,
                    log_prob: beam.log_prob + logs[eos],
                    attentions,
                    finished: true,
                });
                continue;
            }
            for (label, &lp) in logs.iter().enumerate() {
                if label == bos {
                    continue;
                }
                let mut labels = beam.labels.clone();
                labels.push(label);
                let mut attentions = beam.attentions.clone();
                attentions.push(att.clone());
                let log_prob = beam.log_prob + lp;
                expanded.push(Beam { labels, log_prob, attentions, state, y_prev: label });
            }
        }
        if round == max_len {
            break;
        }
        // EOS expansions compete for beam slots like any other label; the
        // survivors that end with EOS move to the finished pool (so width 1
        // reduces to greedy decoding).
        expanded.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .expect("log-probabilities are finite")
                .then_with(|| a.labels.cmp(&b.labels))
        });
        expanded.truncate(width);
        live = Vec::with_capacity(expanded.len());
        for b in expanded {
            if b.y_prev == eos {
                finished.push(Hypothesis {
                    labels: b.labels,
                    log_prob: b.log_prob,
                    attentions: b.attentions,
                    finished: true,
                });
            } else {
                live.push(b);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    rank(&mut finished);
    Ok(finished)
}

/// Aggregation hook for sub-word vocabularies: sums scores over each
/// token's sub-token group. With atomic tokens every group has size one,
/// so the call is the identity.
pub fn aggregate_subtoken_scores(scores: &[f64], groups: &[usize]) -> Result<Vec<f64>> {
    if scores.len() != groups.len() {
        return Err(Error::invalid("one group id per sub-token score required"));
    }
    let mut out: Vec<f64> = Vec::new();
    for (&s, &g) in scores.iter().zip(groups) {
        if g == out.len() {
            out.push(s);
        } else if g + 1 == out.len() {
            *out.last_mut().unwrap() += s;
        } else {
            return Err(Error::invalid("group ids must be contiguous and non-decreasing"));
        }
    }
    Ok(out)
}

/// Candidate token indices at threshold tau (token coordinates).
fn candidates(att: &[f64], tau: f64) -> Vec<usize> {
    att.iter()
        .enumerate()
        .filter(|&(_, &a)| a > tau)
        .map(|(i, _)| i)
        .collect()
}

/// Trigger span over token-coordinate attention scores: the candidate run
/// if contiguous, the contiguous run with the highest summed attention if
/// not (ties toward the leftmost), and the argmax token alone if no score
/// clears the threshold. Returns a half-open (start, end).
pub fn trace_span(att: &[f64], tau: f64) -> (usize, usize) {
    let cand = candidates(att, tau);
    if cand.is_empty() {
        let mut best = 0;
        for (i, &a) in att.iter().enumerate() {
            if a > att[best] {
                best = i;
            }
        }
        return (best, best + 1);
    }
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = cand[0];
    let mut prev = cand[0];
    for &i in &cand[1..] {
        if i != prev + 1 {
            runs.push((start, prev + 1));
            start = i;
        }
        prev = i;
    }
    runs.push((start, prev + 1));
    let mut best = runs[0];
    let mut best_mass: f64 = att[best.0..best.1].iter().sum();
    for &run in &runs[1..] {
        let mass: f64 = att[run.0..run.1].iter().sum();
        if mass > best_mass {
            best = run;
            best_mass = mass;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedEvent {
    #[serde(rename = "type")]
    pub type_name: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub events: Vec<PredictedEvent>,
}

/// Trace trigger spans for every event-type label of a hypothesis. The
/// attention positions covering the two sentinels never enter the candidate
/// set; spans come back in token coordinates.
pub fn trace_triggers(
    hypothesis: &Hypothesis,
    tau: f64,
    n: usize,
    schema: &EventSchema,
    id: &str,
) -> Result<Prediction> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("threshold must lie in (0, 1), got {tau}")));
    }
    let mut events = Vec::new();
    for (t, &label) in hypothesis.labels.iter().enumerate() {
        if !schema.is_domain_type(label) {
            continue;
        }
        let att = &hypothesis.attentions[t];
        if att.numel() != n + 2 {
            return Err(Error::shape(
                "trace_triggers",
                format!("attention has {} entries for {n} tokens", att.numel()),
            ));
        }
        // Strip the sentinel positions; index i now means token i. Atomic
        // tokens make the sub-token aggregation a pass-through.
        let groups: Vec<usize> = (0..n).collect();
        let token_att = aggregate_subtoken_scores(&att.data()[1..=n], &groups)?;
        let (start, end) = trace_span(&token_att, tau);
        events.push(PredictedEvent {
            type_name: schema.label_name(label).to_string(),
            start,
            end,
        });
    }
    Ok(Prediction { id: id.to_string(), events })
}

/// Decode one sentence end to end: encode, beam-search, trace the top
/// hypothesis.
#[allow(clippy::too_many_arguments)]
pub fn predict_sentence(
    model: &Model,
    store: &ParamStore,
    hook: &dyn FeatureHook,
    token_ids: &[usize],
    domain: &str,
    width: usize,
    max_len: usize,
    tau: f64,
    id: &str,
) -> Result<Prediction> {
    let mut tape = Tape::new();
    let encoded = model.encoder.encode(&mut tape, store, token_ids)?;
    let h_used = hook.apply(&mut tape, store, encoded.h, encoded.n, domain)?;
    let hyps = beam_search(model, &mut tape, store, h_used, width, max_len)?;
    let top = hyps.first().expect("beam search always finishes at least one hypothesis");
    trace_triggers(top, tau, encoded.n, &model.cfg.schema, id)
}

/// Decode a whole corpus, one prediction per sentence.
#[allow(clippy::too_many_arguments)]
pub fn predict_corpus(
    model: &Model,
    store: &ParamStore,
    hook: &dyn FeatureHook,
    corpus: &Corpus,
    vocab: &Vocab,
    width: usize,
    max_len: usize,
    tau: f64,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(corpus.num_sentences());
    for doc in &corpus.documents {
        for (si, sent) in doc.sentences.iter().enumerate() {
            let ids = vocab.encode(&sent.tokens);
            out.push(predict_sentence(
                model,
                store,
                hook,
                &ids,
                &doc.domain,
                width,
                max_len,
                tau,
                &sentence_id(&doc.id, si),
            )?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneMode {
    Identification,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub tau: f64,
    /// (tau, micro-F1) for every grid point, ascending tau.
    pub grid: Vec<(f64, f64)>,
}

/// Scan the threshold grid on a dev split and keep the tau with the best
/// micro-F1 under `mode`; ties resolve toward the smaller threshold. The
/// beam runs once per sentence; only the tracing is repeated per tau.
#[allow(clippy::too_many_arguments)]
pub fn tune_threshold(
    model: &Model,
    store: &ParamStore,
    hook: &dyn FeatureHook,
    dev: &Corpus,
    vocab: &Vocab,
    width: usize,
    max_len: usize,
    mode: TuneMode,
) -> Result<TuneOutcome> {
    if dev.documents.is_empty() {
        return Err(Error::invalid("threshold tuning needs a nonempty dev split"));
    }
    let mut tops: Vec<(String, usize, Hypothesis)> = Vec::new();
    for doc in &dev.documents {
        for (si, sent) in doc.sentences.iter().enumerate() {
            let ids = vocab.encode(&sent.tokens);
            let mut tape = Tape::new();
            let encoded = model.encoder.encode(&mut tape, store, &ids)?;
            let h_used = hook.apply(&mut tape, store, encoded.h, encoded.n, &doc.domain)?;
            let mut hyps = beam_search(model, &mut tape, store, h_used, width, max_len)?;
            tops.push((sentence_id(&doc.id, si), encoded.n, hyps.remove(0)));
        }
    }
    let mut best_tau = TAU_GRID[0];
    let mut best_f1 = f64::NEG_INFINITY;
    let mut grid = Vec::with_capacity(TAU_GRID.len());
    for &tau in &TAU_GRID {
        let preds: Vec<Prediction> = tops
            .iter()
            .map(|(id, n, hyp)| trace_triggers(hyp, tau, *n, &model.cfg.schema, id))
            .collect::<Result<_>>()?;
        let report = crate::metrics::score(dev, &preds)?;
        let f1 = match mode {
            TuneMode::Identification => report.identification.f1,
            TuneMode::Classification => report.classification.f1,
        };
        grid.push((tau, f1));
        if f1 > best_f1 {
            best_f1 = f1;
            best_tau = tau;
        }
    }
    Ok(TuneOutcome { tau: best_tau, grid })
}

/// Write predictions as JSON lines: {"id": ..., "events": [...]}.
pub fn save_predictions(predictions: &[Prediction], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in predictions {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).map_err(|e| Error::CorpusFormat {
            line: i + 1,
            detail: format!("bad prediction line: {e}"),
        })?;
        out.push(p);
    }
    Ok(out)
}
