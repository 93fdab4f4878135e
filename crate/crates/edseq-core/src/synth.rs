//! Deterministic synthetic-corpus generator. Each event type owns a
//! disjoint trigger lexicon of 1-3 token lexemes; distractor tokens fill
//! the rest of every sentence, so trigger tokens never occur outside a
//! mention span.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Mention, Sentence};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::schema::EventSchema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainProfile {
    pub name: String,
    /// Event-type sampling weights aligned with the schema; must sum to 1.
    pub type_freqs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub schema: EventSchema,
    pub domains: Vec<DomainProfile>,
    pub docs_per_domain: usize,
    /// Inclusive sentence-count range per document.
    pub sentences_per_doc: (usize, usize),
    /// Inclusive token-length range per sentence (stretched when a sentence
    /// must fit more trigger tokens than the range allows).
    pub sentence_len_range: (usize, usize),
    /// Fraction of evented sentences carrying two or more mentions.
    pub multi_event_proportion: f64,
    /// Fraction of sentences with no mention at all.
    pub eventless_proportion: f64,
    /// Total token inventory; trigger pools are carved from the front.
    pub vocab_size: usize,
    /// Distinct lexemes per event type.
    pub lexemes_per_type: usize,
    /// Distinct trigger tokens reserved per event type.
    pub trigger_pool_per_type: usize,
}

impl SynthSpec {
    /// Ready-to-run spec over the default schema and the benchmark's three
    /// collection scenarios, with per-domain frequency ramps so the domains
    /// are measurably heterogeneous.
    pub fn standard(docs_per_domain: usize) -> Self {
        let schema = EventSchema::default();
        let t = schema.num_types();
        let domains = ["review", "text_conv", "phone_conv"]
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let raw: Vec<f64> = (0..t).map(|i| 1.0 + ((i + 7 * k) % t) as f64).collect();
                let total: f64 = raw.iter().sum();
                DomainProfile {
                    name: name.to_string(),
                    type_freqs: raw.into_iter().map(|w| w / total).collect(),
                }
            })
            .collect();
        SynthSpec {
            schema,
            domains,
            docs_per_domain,
            sentences_per_doc: (3, 5),
            sentence_len_range: (6, 12),
            multi_event_proportion: 0.35,
            eventless_proportion: 0.15,
            vocab_size: 160,
            lexemes_per_type: 3,
            trigger_pool_per_type: 4,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.domains.is_empty() || self.docs_per_domain == 0 {
            return Err(Error::invalid("need at least one domain and one document"));
        }
        if self.sentences_per_doc.0 == 0 || self.sentences_per_doc.0 > self.sentences_per_doc.1 {
            return Err(Error::invalid("bad sentences-per-document range"));
        }
        if self.sentence_len_range.0 == 0 || self.sentence_len_range.0 > self.sentence_len_range.1 {
            return Err(Error::invalid("bad sentence-length range"));
        }
        if !(0.0..=1.0).contains(&self.multi_event_proportion)
            || !(0.0..=1.0).contains(&self.eventless_proportion)
        {
            return Err(Error::invalid("proportions must lie in [0, 1]"));
        }
        if self.lexemes_per_type == 0 || self.trigger_pool_per_type == 0 {
            return Err(Error::invalid("lexicon sizes must be positive"));
        }
        let reserved = self.schema.num_types() * self.trigger_pool_per_type;
        if reserved + 1 > self.vocab_size {
            return Err(Error::invalid(format!(
                "trigger lexicons need {reserved} tokens plus distractors, \
                 but vocab size is only {}",
                self.vocab_size
            )));
        }
        for d in &self.domains {
            if d.type_freqs.len() != self.schema.num_types() {
                return Err(Error::invalid(format!(
                    "domain {:?} has {} frequencies for {} types",
                    d.name,
                    d.type_freqs.len(),
                    self.schema.num_types()
                )));
            }
            let sum: f64 = d.type_freqs.iter().sum();
            if d.type_freqs.iter().any(|&f| f < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "domain {:?} frequencies must be non-negative and sum to 1 (got {sum})",
                    d.name
                )));
            }
        }
        Ok(())
    }
}

/// Trigger lexicons per type plus the distractor pool.
#[derive(Debug, Clone)]
pub struct Lexicons {
    /// lexemes[type][lexeme] = token sequence of length 1-3.
    pub lexemes: Vec<Vec<Vec<String>>>,
    pub distractors: Vec<String>,
}

fn build_lexicons(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Lexicons> {
    let pool = spec.trigger_pool_per_type;
    let mut lexemes = Vec::with_capacity(spec.schema.num_types());
    for (ti, tname) in spec.schema.types().iter().enumerate() {
        let tokens: Vec<String> = (0..pool)
            .map(|j| format!("trg_{}_{j}", tname.to_lowercase()))
            .collect();
        let mut chosen: Vec<Vec<String>> = Vec::with_capacity(spec.lexemes_per_type);
        let mut tries = 0;
        while chosen.len() < spec.lexemes_per_type {
            tries += 1;
            if tries > 1000 {
                return Err(Error::invalid(format!(
                    "cannot draw {} prefix-free lexemes for type index {ti} from a pool of {pool}",
                    spec.lexemes_per_type
                )));
            }
            let len = rng.random_range(1..=3usize);
            let cand: Vec<String> = (0..len)
                .map(|_| tokens[rng.random_range(0..pool)].clone())
                .collect();
            // Prefix-free within a type keeps span boundaries unambiguous.
            let clashes = chosen
                .iter()
                .any(|c| c.starts_with(&cand[..cand.len().min(c.len())]) || cand.starts_with(&c[..c.len().min(cand.len())]));
            if !clashes {
                chosen.push(cand);
            }
        }
        lexemes.push(chosen);
    }
    let reserved = spec.schema.num_types() * pool;
    let distractors: Vec<String> = (0..spec.vocab_size - reserved)
        .map(|i| format!("w{i}"))
        .collect();
    Ok(Lexicons { lexemes, distractors })
}

fn weighted_choice(freqs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let x: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &f) in freqs.iter().enumerate() {
        acc += f;
        if x < acc {
            return i;
        }
    }
    freqs.len() - 1
}

fn gen_sentence(
    spec: &SynthSpec,
    lex: &Lexicons,
    profile: &DomainProfile,
    rng: &mut ChaCha8Rng,
) -> Sentence {
    let (min_len, max_len) = spec.sentence_len_range;
    let eventless = rng.random::<f64>() < spec.eventless_proportion;
    if eventless {
        let len = rng.random_range(min_len..=max_len);
        let tokens = (0..len)
            .map(|_| lex.distractors[rng.random_range(0..lex.distractors.len())].clone())
            .collect();
        return Sentence { tokens, mentions: vec![] };
    }
    let multi = rng.random::<f64>() < spec.multi_event_proportion;
    let k = if multi { rng.random_range(2..=3usize) } else { 1 };
    let picks: Vec<(usize, &Vec<String>)> = (0..k)
        .map(|_| {
            let ti = weighted_choice(&profile.type_freqs, rng);
            let li = rng.random_range(0..lex.lexemes[ti].len());
            (ti, &lex.lexemes[ti][li])
        })
        .collect();
    let trig_tokens: usize = picks.iter().map(|(_, l)| l.len()).sum();
    // Interior gaps of at least one distractor keep adjacent triggers from
    // fusing into an unintended longer lexeme.
    let needed = trig_tokens + (k - 1);
    let len = rng.random_range(needed.max(min_len)..=needed.max(max_len));
    let mut free = len - needed;
    // Split the slack over k+1 gaps (interior gaps already own one token).
    let mut gaps = vec![0usize; k + 1];
    for g in gaps.iter_mut().skip(1).take(k - 1) {
        *g = 1;
    }
    for _ in 0..free {
        gaps[rng.random_range(0..k + 1)] += 1;
    }
    free = 0;
    let _ = free;
    let mut tokens: Vec<String> = Vec::with_capacity(len);
    let mut mentions = Vec::with_capacity(k);
    for (i, (ti, lexeme)) in picks.iter().enumerate() {
        for _ in 0..gaps[i] {
            tokens.push(lex.distractors[rng.random_range(0..lex.distractors.len())].clone());
        }
        let start = tokens.len();
        tokens.extend(lexeme.iter().cloned());
        mentions.push(Mention {
            start,
            end: tokens.len(),
            type_name: spec.schema.types()[*ti].clone(),
        });
    }
    for _ in 0..gaps[k] {
        tokens.push(lex.distractors[rng.random_range(0..lex.distractors.len())].clone());
    }
    debug_assert_eq!(tokens.len(), len);
    Sentence { tokens, mentions }
}

/// Generate a corpus; identical (seed, spec) pairs produce byte-identical
/// output.
pub fn generate_synthetic_corpus(seed: u64, spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = substream(seed, "synth");
    let lex = build_lexicons(spec, &mut rng)?;
    let mut documents = Vec::with_capacity(spec.domains.len() * spec.docs_per_domain);
    for profile in &spec.domains {
        for di in 0..spec.docs_per_domain {
            let n_sents = rng.random_range(spec.sentences_per_doc.0..=spec.sentences_per_doc.1);
            let sentences = (0..n_sents)
                .map(|_| gen_sentence(spec, &lex, profile, &mut rng))
                .collect();
            documents.push(Document {
                id: format!("{}-{di:04}", profile.name),
                domain: profile.name.clone(),
                sentences,
            });
        }
    }
    let corpus = Corpus { documents };
    corpus.validate(&spec.schema)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_byte_identical() {
        let spec = SynthSpec::standard(5);
        let a = generate_synthetic_corpus(11, &spec).unwrap();
        let b = generate_synthetic_corpus(11, &spec).unwrap();
        let ser = |c: &Corpus| {
            c.documents
                .iter()
                .map(|d| serde_json::to_string(d).unwrap())
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(ser(&a), ser(&b));
        let c = generate_synthetic_corpus(12, &spec).unwrap();
        assert_ne!(ser(&a), ser(&c));
    }

    #[test]
    fn document_count_is_domains_times_docs() {
        let mut spec = SynthSpec::standard(100);
        spec.sentences_per_doc = (1, 2);
        let corpus = generate_synthetic_corpus(3, &spec).unwrap();
        assert_eq!(corpus.documents.len(), 300);
        assert_eq!(corpus.domains().len(), 3);
    }

    #[test]
    fn every_mention_covers_a_lexeme_of_its_type() {
        let spec = SynthSpec::standard(20);
        let mut rng = substream(9, "synth");
        let lex = build_lexicons(&spec, &mut rng).unwrap();
        let corpus = generate_synthetic_corpus(9, &spec).unwrap();
        let mut mentions_seen = 0;
        for (_, sent) in corpus.sentences() {
            for m in &sent.mentions {
                mentions_seen += 1;
                let ti = spec.schema.type_index(&m.type_name).unwrap();
                let span: Vec<String> = sent.tokens[m.start..m.end].to_vec();
                assert!(
                    lex.lexemes[ti].contains(&span),
                    "span {span:?} is not a lexeme of {}",
                    m.type_name
                );
            }
        }
        assert!(mentions_seen > 50);
    }

    #[test]
    fn trigger_tokens_never_leak_outside_mentions() {
        let spec = SynthSpec::standard(20);
        let corpus = generate_synthetic_corpus(4, &spec).unwrap();
        for (_, sent) in corpus.sentences() {
            let covered: Vec<bool> = {
                let mut c = vec![false; sent.tokens.len()];
                for m in &sent.mentions {
                    for slot in c.iter_mut().take(m.end).skip(m.start) {
                        *slot = true;
                    }
                }
                c
            };
            for (i, t) in sent.tokens.iter().enumerate() {
                if !covered[i] {
                    assert!(t.starts_with('w'), "uncovered token {t:?} should be a distractor");
                }
            }
        }
    }

    #[test]
    fn infeasible_lexicon_rejected() {
        let mut spec = SynthSpec::standard(5);
        spec.vocab_size = spec.schema.num_types() * spec.trigger_pool_per_type; // no distractor room
        let err = generate_synthetic_corpus(1, &spec).unwrap_err().to_string();
        assert!(err.contains("vocab"), "{err}");
    }

    #[test]
    fn frequencies_must_sum_to_one() {
        let mut spec = SynthSpec::standard(5);
        spec.domains[0].type_freqs[0] += 0.25;
        assert!(generate_synthetic_corpus(1, &spec).is_err());
    }
}
