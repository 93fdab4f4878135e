//! Evaluation metrics (micro P/R/F1 for trigger identification and
//! classification, event-count buckets) and corpus analytics (type
//! distributions, Wasserstein heterogeneity, Cohen's kappa, trigger
//! lengths, event density, word-trigger mismatch).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{sentence_id, Corpus, Mention};
use crate::error::{Error, Result};
use crate::infer::{Prediction, PredictedEvent};
use crate::schema::EventSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Identification,
    Classification,
}

/// Micro counts and derived scores for one task.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskScore {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TaskScore {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        TaskScore { tp, fp, fn_, precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    fn score(self) -> TaskScore {
        TaskScore::from_counts(self.tp, self.fp, self.fn_)
    }
}

/// Scores per task plus the optional breakdowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub identification: TaskScore,
    pub classification: TaskScore,
    /// domain -> (identification, classification)
    pub per_domain: BTreeMap<String, (TaskScore, TaskScore)>,
    /// bucket ("1/1" or "1/N") -> (identification, classification)
    pub per_bucket: BTreeMap<String, (TaskScore, TaskScore)>,
    /// event type -> classification score restricted to that type
    pub per_type: BTreeMap<String, TaskScore>,
}

impl EvalReport {
    pub fn task(&self, mode: ScoreMode) -> &TaskScore {
        match mode {
            ScoreMode::Identification => &self.identification,
            ScoreMode::Classification => &self.classification,
        }
    }
}

/// Exact-match micro counts for one sentence. Duplicate identical
/// predictions are deduplicated; matching is per-key multiset
/// intersection, which equals the maximum bipartite matching under exact
/// key equality.
fn sentence_counts(gold: &[Mention], preds: &[PredictedEvent]) -> (Counts, Counts, BTreeMap<String, Counts>) {
    let dedup: BTreeSet<(usize, usize, &str)> = preds
        .iter()
        .map(|p| (p.start, p.end, p.type_name.as_str()))
        .collect();

    let mut gold_spans: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut gold_triples: BTreeMap<(usize, usize, &str), usize> = BTreeMap::new();
    for m in gold {
        *gold_spans.entry((m.start, m.end)).or_default() += 1;
        *gold_triples.entry((m.start, m.end, m.type_name.as_str())).or_default() += 1;
    }
    let mut pred_spans: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for &(s, e, _) in &dedup {
        *pred_spans.entry((s, e)).or_default() += 1;
    }

    let tp_id: usize = pred_spans
        .iter()
        .map(|(k, &c)| c.min(gold_spans.get(k).copied().unwrap_or(0)))
        .sum();
    let id = Counts { tp: tp_id, fp: dedup.len() - tp_id, fn_: gold.len() - tp_id };

    let mut tp_cls = 0;
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    let mut pred_triples: BTreeMap<(usize, usize, &str), usize> = BTreeMap::new();
    for &(s, e, t) in &dedup {
        *pred_triples.entry((s, e, t)).or_default() += 1;
    }
    for (key, &pc) in &pred_triples {
        let gc = gold_triples.get(key).copied().unwrap_or(0);
        let tp = pc.min(gc);
        tp_cls += tp;
        let entry = per_type.entry(key.2.to_string()).or_default();
        entry.tp += tp;
        entry.fp += pc - tp;
    }
    for (key, &gc) in &gold_triples {
        let pc = pred_triples.get(key).copied().unwrap_or(0);
        let entry = per_type.entry(key.2.to_string()).or_default();
        entry.fn_ += gc - gc.min(pc);
    }
    let cls = Counts { tp: tp_cls, fp: dedup.len() - tp_cls, fn_: gold.len() - tp_cls };
    (id, cls, per_type)
}

/// Micro-score predictions against the gold corpus. Sentences without a
/// prediction line count as empty predictions.
pub fn score(gold: &Corpus, predictions: &[Prediction]) -> Result<EvalReport> {
    let mut by_id: BTreeMap<&str, &Prediction> = BTreeMap::new();
    for p in predictions {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(Error::invalid(format!("duplicate prediction for sentence {:?}", p.id)));
        }
    }
    let mut known: BTreeSet<String> = BTreeSet::new();
    let empty: Vec<PredictedEvent> = Vec::new();

    let mut total_id = Counts::default();
    let mut total_cls = Counts::default();
    let mut per_domain: BTreeMap<String, (Counts, Counts)> = BTreeMap::new();
    let mut per_bucket: BTreeMap<String, (Counts, Counts)> = BTreeMap::new();
    per_bucket.insert("1/1".to_string(), (Counts::default(), Counts::default()));
    per_bucket.insert("1/N".to_string(), (Counts::default(), Counts::default()));
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();

    for doc in &gold.documents {
        for (si, sent) in doc.sentences.iter().enumerate() {
            let sid = sentence_id(&doc.id, si);
            let events = by_id.get(sid.as_str()).map(|p| &p.events).unwrap_or(&empty);
            known.insert(sid);
            let (id, cls, types) = sentence_counts(&sent.mentions, events);
            total_id.add(id);
            total_cls.add(cls);
            let dom = per_domain.entry(doc.domain.clone()).or_default();
            dom.0.add(id);
            dom.1.add(cls);
            for (t, c) in types {
                per_type.entry(t).or_default().add(c);
            }
            match sent.mentions.len() {
                0 => {
                    // Event-less sentences donate their false positives to
                    // both buckets' precision denominators.
                    for b in per_bucket.values_mut() {
                        b.0.add(id);
                        b.1.add(cls);
                    }
                }
                1 => {
                    let b = per_bucket.get_mut("1/1").unwrap();
                    b.0.add(id);
                    b.1.add(cls);
                }
                _ => {
                    let b = per_bucket.get_mut("1/N").unwrap();
                    b.0.add(id);
                    b.1.add(cls);
                }
            }
        }
    }
    for p in predictions {
        if !known.contains(&p.id) {
            return Err(Error::invalid(format!("prediction references unknown sentence {:?}", p.id)));
        }
    }
    Ok(EvalReport {
        identification: total_id.score(),
        classification: total_cls.score(),
        per_domain: per_domain
            .into_iter()
            .map(|(k, (a, b))| (k, (a.score(), b.score())))
            .collect(),
        per_bucket: per_bucket
            .into_iter()
            .map(|(k, (a, b))| (k, (a.score(), b.score())))
            .collect(),
        per_type: per_type.into_iter().map(|(k, c)| (k, c.score())).collect(),
    })
}

/// Bucketed view of `score`: sentences with exactly one gold mention land
/// in "1/1", two or more in "1/N".
pub fn score_by_event_count(
    gold: &Corpus,
    predictions: &[Prediction],
) -> Result<BTreeMap<String, (TaskScore, TaskScore)>> {
    Ok(score(gold, predictions)?.per_bucket)
}

/// Cohen's kappa over two equal-length label sequences.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "annotation lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("empty annotation sequences"));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let p_o = agree / n;
    let mut ca: BTreeMap<&T, f64> = BTreeMap::new();
    let mut cb: BTreeMap<&T, f64> = BTreeMap::new();
    for x in a {
        *ca.entry(x).or_default() += 1.0;
    }
    for y in b {
        *cb.entry(y).or_default() += 1.0;
    }
    let p_e: f64 = ca
        .iter()
        .map(|(k, &na)| na / n * cb.get(k).copied().unwrap_or(0.0) / n)
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::domain(
            "cohen_kappa",
            "expected agreement is 1; kappa is undefined".to_string(),
        ));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Occurrence frequency of each schema type within one domain.
pub fn type_distribution(corpus: &Corpus, domain: &str, schema: &EventSchema) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; schema.num_types()];
    let mut seen_domain = false;
    for doc in &corpus.documents {
        if doc.domain != domain {
            continue;
        }
        seen_domain = true;
        for sent in &doc.sentences {
            for m in &sent.mentions {
                let ti = schema
                    .type_index(&m.type_name)
                    .ok_or_else(|| Error::invalid(format!("unknown type {:?}", m.type_name)))?;
                counts[ti] += 1;
            }
        }
    }
    if !seen_domain {
        return Err(Error::invalid(format!("no documents in domain {domain:?}")));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid(format!("domain {domain:?} has no mentions")));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// 1-D Wasserstein distance between two distributions over the schema's
/// fixed type indices (unit ground metric, cumulative-difference form).
pub fn wasserstein_1d(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid("distribution lengths differ"));
    }
    let mut cum = 0.0;
    let mut total = 0.0;
    for (a, b) in p.iter().zip(q) {
        cum += a - b;
        total += cum.abs();
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub domains: Vec<String>,
    pub distributions: BTreeMap<String, Vec<f64>>,
    /// (domain_a, domain_b) -> Wasserstein distance, a < b.
    pub pairwise: BTreeMap<(String, String), f64>,
    pub avg_wasserstein: f64,
    /// Mentions per sentence, per domain, with its cross-domain spread.
    pub event_density: BTreeMap<String, f64>,
    pub event_density_std: f64,
}

/// Average Wasserstein distance: mean over the C(N,2) domain pairs,
/// divided by the type count M.
pub fn avg_wasserstein(corpus: &Corpus, schema: &EventSchema) -> Result<HeterogeneityReport> {
    let domains = corpus.domains();
    if domains.len() < 2 {
        return Err(Error::invalid("need at least two domains for heterogeneity"));
    }
    let mut distributions = BTreeMap::new();
    for d in &domains {
        distributions.insert(d.clone(), type_distribution(corpus, d, schema)?);
    }
    let mut pairwise = BTreeMap::new();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..domains.len() {
        for j in i + 1..domains.len() {
            let w = wasserstein_1d(&distributions[&domains[i]], &distributions[&domains[j]])?;
            pairwise.insert((domains[i].clone(), domains[j].clone()), w);
            sum += w;
            pairs += 1;
        }
    }
    let m = schema.num_types() as f64;
    let avg = sum / pairs as f64 / m;
    let stats = corpus_stats(corpus);
    Ok(HeterogeneityReport {
        domains,
        distributions,
        pairwise,
        avg_wasserstein: avg,
        event_density: stats.event_density,
        event_density_std: stats.event_density_std,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Trigger-length buckets [1,2], [3,4], [5,inf): counts and shares.
    pub trigger_len_counts: [usize; 3],
    pub trigger_len_shares: [f64; 3],
    /// #(sentences with >= 2 mentions) / #(sentences with >= 1 mention).
    pub multi_event_proportion: f64,
    /// Same numerator over all sentences.
    pub multi_event_proportion_all: f64,
    /// domain -> mentions per sentence.
    pub event_density: BTreeMap<String, f64>,
    /// Population standard deviation of the per-domain densities.
    pub event_density_std: f64,
    /// domain -> mean sentence length in tokens.
    pub mean_sentence_len: BTreeMap<String, f64>,
    /// Population standard deviation of per-domain mean sentence lengths.
    pub sentence_len_std: f64,
}

fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut len_counts = [0usize; 3];
    let mut evented = 0usize;
    let mut multi = 0usize;
    let mut total_sents = 0usize;
    let mut per_domain: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new(); // (mentions, sentences, tokens)
    for doc in &corpus.documents {
        let entry = per_domain.entry(doc.domain.clone()).or_default();
        for sent in &doc.sentences {
            total_sents += 1;
            entry.1 += 1;
            entry.2 += sent.tokens.len();
            entry.0 += sent.mentions.len();
            if !sent.mentions.is_empty() {
                evented += 1;
                if sent.mentions.len() >= 2 {
                    multi += 1;
                }
            }
            for m in &sent.mentions {
                let len = m.end - m.start;
                let bucket = if len <= 2 { 0 } else if len <= 4 { 1 } else { 2 };
                len_counts[bucket] += 1;
            }
        }
    }
    let total_mentions: usize = len_counts.iter().sum();
    let shares = if total_mentions == 0 {
        [0.0; 3]
    } else {
        [
            len_counts[0] as f64 / total_mentions as f64,
            len_counts[1] as f64 / total_mentions as f64,
            len_counts[2] as f64 / total_mentions as f64,
        ]
    };
    let density: BTreeMap<String, f64> = per_domain
        .iter()
        .map(|(d, &(m, s, _))| (d.clone(), if s == 0 { 0.0 } else { m as f64 / s as f64 }))
        .collect();
    let mean_len: BTreeMap<String, f64> = per_domain
        .iter()
        .map(|(d, &(_, s, t))| (d.clone(), if s == 0 { 0.0 } else { t as f64 / s as f64 }))
        .collect();
    CorpusStats {
        trigger_len_counts: len_counts,
        trigger_len_shares: shares,
        multi_event_proportion: if evented == 0 { 0.0 } else { multi as f64 / evented as f64 },
        multi_event_proportion_all: if total_sents == 0 {
            0.0
        } else {
            multi as f64 / total_sents as f64
        },
        event_density_std: population_std(&density.values().copied().collect::<Vec<_>>()),
        event_density: density,
        sentence_len_std: population_std(&mean_len.values().copied().collect::<Vec<_>>()),
        mean_sentence_len: mean_len,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub regular_pct: f64,
    pub cross_word_pct: f64,
    pub inside_word_pct: f64,
}

/// Word spans (token coordinates) for one segmentation line like
/// "w1 w2/w3": words separated by single slashes, each word the exact
/// concatenation of consecutive tokens.
fn word_spans(tokens: &[String], line: &str) -> Result<Vec<(usize, usize)>> {
    let mut spans = Vec::new();
    let mut cursor = 0usize;
    for word in line.split('/') {
        let start = cursor;
        let mut acc = String::new();
        while acc.len() < word.len() && cursor < tokens.len() {
            acc.push_str(&tokens[cursor]);
            cursor += 1;
        }
        if acc != word {
            return Err(Error::invalid(format!(
                "segmentation word {word:?} does not align with tokens {:?}",
                &tokens[start..cursor.min(tokens.len())]
            )));
        }
        spans.push((start, cursor));
    }
    if cursor != tokens.len() {
        return Err(Error::invalid(format!(
            "segmentation covers {cursor} of {} tokens",
            tokens.len()
        )));
    }
    Ok(spans)
}

/// Classify every mention against word boundaries: regular (= one word),
/// cross-word (intersects >= 2 words), inside-word (strictly inside one).
pub fn word_trigger_mismatch(corpus: &Corpus, segmentation_lines: &[String]) -> Result<MismatchReport> {
    let total_sents = corpus.num_sentences();
    if segmentation_lines.len() != total_sents {
        return Err(Error::invalid(format!(
            "segmentation has {} lines for {total_sents} sentences",
            segmentation_lines.len()
        )));
    }
    let mut regular = 0usize;
    let mut cross = 0usize;
    let mut inside = 0usize;
    for ((_, sent), line) in corpus.sentences().zip(segmentation_lines) {
        let words = word_spans(&sent.tokens, line)?;
        for m in &sent.mentions {
            let hits: Vec<(usize, usize)> = words
                .iter()
                .copied()
                .filter(|&(ws, we)| m.start < we && ws < m.end)
                .collect();
            match hits.len() {
                0 => unreachable!("validated mention always overlaps a covering word"),
                1 => {
                    if hits[0] == (m.start, m.end) {
                        regular += 1;
                    } else {
                        inside += 1;
                    }
                }
                _ => cross += 1,
            }
        }
    }
    let total = regular + cross + inside;
    if total == 0 {
        return Err(Error::invalid("corpus has no mentions to classify"));
    }
    Ok(MismatchReport {
        regular_pct: 100.0 * regular as f64 / total as f64,
        cross_word_pct: 100.0 * cross as f64 / total as f64,
        inside_word_pct: 100.0 * inside as f64 / total as f64,
    })
}
