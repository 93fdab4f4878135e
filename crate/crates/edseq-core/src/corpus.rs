//! Multi-domain event-annotated corpora: data model, line-delimited JSON
//! I/O, validation, document-level splitting, and decoding-target
//! construction for the sequence generator.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::schema::EventSchema;
use rand::seq::SliceRandom;

/// Trigger span over sentence tokens; end-exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub type_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub mentions: Vec<Mention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub domain: String,
    pub sentences: Vec<Sentence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_events(&self) -> bool {
        !self.mentions.is_empty()
    }
}

impl Corpus {
    pub fn num_sentences(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }

    pub fn sentences(&self) -> impl Iterator<Item = (&Document, &Sentence)> {
        self.documents
            .iter()
            .flat_map(|d| d.sentences.iter().map(move |s| (d, s)))
    }

    pub fn domains(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.documents.iter().map(|d| d.domain.as_str()).collect();
        set.into_iter().map(|s| s.to_string()).collect()
    }

    /// Check every structural invariant against the schema. Errors name the
    /// offending document.
    pub fn validate(&self, schema: &EventSchema) -> Result<()> {
        let mut ids = BTreeSet::new();
        for doc in &self.documents {
            if doc.domain.is_empty() {
                return Err(Error::validation(&doc.id, "empty domain tag"));
            }
            if !ids.insert(doc.id.clone()) {
                return Err(Error::validation(&doc.id, "duplicate document id"));
            }
            for (si, sent) in doc.sentences.iter().enumerate() {
                if sent.tokens.is_empty() {
                    return Err(Error::validation(&doc.id, format!("sentence {si} has no tokens")));
                }
                let mut keys = BTreeSet::new();
                for m in &sent.mentions {
                    if m.start >= m.end || m.end > sent.tokens.len() {
                        return Err(Error::validation(
                            &doc.id,
                            format!(
                                "sentence {si}: span {}..{} out of bounds for length {}",
                                m.start,
                                m.end,
                                sent.tokens.len()
                            ),
                        ));
                    }
                    if schema.type_index(&m.type_name).is_none() {
                        let reserved = matches!(m.type_name.as_str(), "None" | "EOS" | "BOS");
                        let kind = if reserved { "reserved label" } else { "unknown event type" };
                        return Err(Error::validation(
                            &doc.id,
                            format!("sentence {si}: {kind} {:?}", m.type_name),
                        ));
                    }
                    if !keys.insert((m.start, m.end, m.type_name.clone())) {
                        return Err(Error::validation(
                            &doc.id,
                            format!(
                                "sentence {si}: duplicate mention ({}, {}, {:?})",
                                m.start, m.end, m.type_name
                            ),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        for doc in &self.documents {
            serde_json::to_writer(&mut out, doc)?;
            out.push(b'\n');
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Load and validate a line-delimited corpus file.
pub fn load_corpus(path: impl AsRef<Path>, schema: &EventSchema) -> Result<Corpus> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut documents = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::CorpusFormat {
            line: i + 1,
            detail: e.to_string(),
        })?;
        documents.push(doc);
    }
    let corpus = Corpus { documents };
    corpus.validate(schema)?;
    Ok(corpus)
}

/// Document-level 8:1:1 partition: ⌊0.8n⌋ train, ⌊0.1n⌋ dev, remainder test.
pub fn split_corpus(corpus: &Corpus, seed: u64) -> Result<(Corpus, Corpus, Corpus, SplitManifest)> {
    let n = corpus.documents.len();
    if n < 10 {
        return Err(Error::invalid(format!("need at least 10 documents to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, "split");
    order.shuffle(&mut rng);
    let n_train = (n as f64 * 0.8).floor() as usize;
    let n_dev = (n as f64 * 0.1).floor() as usize;
    let pick = |idx: &[usize]| Corpus {
        documents: idx.iter().map(|&i| corpus.documents[i].clone()).collect(),
    };
    let train = pick(&order[..n_train]);
    let dev = pick(&order[n_train..n_train + n_dev]);
    let test = pick(&order[n_train + n_dev..]);
    let ids = |c: &Corpus| c.documents.iter().map(|d| d.id.clone()).collect();
    let manifest = SplitManifest {
        train: ids(&train),
        dev: ids(&dev),
        test: ids(&test),
        seed,
    };
    Ok((train, dev, test, manifest))
}

impl SplitManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        serde_json::to_writer(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Materialize the three subsets, preserving manifest order.
    pub fn apply(&self, corpus: &Corpus) -> Result<(Corpus, Corpus, Corpus)> {
        let by_id: std::collections::BTreeMap<&str, &Document> = corpus
            .documents
            .iter()
            .map(|d| (d.id.as_str(), d))
            .collect();
        let pick = |ids: &[String]| -> Result<Corpus> {
            let mut documents = Vec::with_capacity(ids.len());
            for id in ids {
                let doc = by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::invalid(format!("manifest id {id:?} not in corpus")))?;
                documents.push((*doc).clone());
            }
            Ok(Corpus { documents })
        };
        Ok((pick(&self.train)?, pick(&self.dev)?, pick(&self.test)?))
    }
}

/// Canonical sentence identifier: document id plus sentence index.
pub fn sentence_id(doc_id: &str, index: usize) -> String {
    format!("{doc_id}:{index}")
}

/// Gold supervision for one generation step, in encoder coordinates
/// (0 = head sentinel, token i at i+1, tail sentinel at n+1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepTarget {
    /// Schema label id; final step is EOS.
    pub label: usize,
    /// Teacher-forcing position: leftmost trigger token, or the tail
    /// sentinel for None/EOS steps.
    pub attend_index: usize,
    /// Every trigger-token position; gold attention spreads 1/k over these.
    pub attend_support: Vec<usize>,
    /// Original token-coordinate span; absent for None/EOS steps.
    pub trigger_span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodingTarget {
    pub steps: Vec<StepTarget>,
    /// Token count of the source sentence (encoded length is this + 2).
    pub sentence_len: usize,
}

impl DecodingTarget {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.label).collect()
    }

    pub fn encoded_len(&self) -> usize {
        self.sentence_len + 2
    }
}

/// Left-to-right label sequence: mentions sorted by (start, end, type),
/// duplicates retained, EOS appended; event-less sentences get [None, EOS]
/// attending to the tail sentinel.
pub fn build_decoding_target(sentence: &Sentence, schema: &EventSchema) -> DecodingTarget {
    let n = sentence.tokens.len();
    let tail = n + 1;
    let mut steps = Vec::new();
    if sentence.mentions.is_empty() {
        steps.push(StepTarget {
            label: schema.none_id(),
            attend_index: tail,
            attend_support: vec![tail],
            trigger_span: None,
        });
    } else {
        let mut ordered: Vec<&Mention> = sentence.mentions.iter().collect();
        ordered.sort_by(|a, b| {
            (a.start, a.end, &a.type_name).cmp(&(b.start, b.end, &b.type_name))
        });
        for m in ordered {
            let label = schema
                .type_index(&m.type_name)
                .expect("validated sentence has known types");
            steps.push(StepTarget {
                label,
                attend_index: m.start + 1,
                attend_support: (m.start..m.end).map(|i| i + 1).collect(),
                trigger_span: Some((m.start, m.end)),
            });
        }
    }
    steps.push(StepTarget {
        label: schema.eos_id(),
        attend_index: tail,
        attend_support: vec![tail],
        trigger_span: None,
    });
    DecodingTarget {
        steps,
        sentence_len: n,
    }
}

/// Concatenate two sentences, shifting the second sentence's spans.
pub fn augment_concat(s1: &Sentence, s2: &Sentence, max_len: usize) -> Result<Sentence> {
    let combined = s1.tokens.len() + s2.tokens.len();
    if combined > max_len {
        return Err(Error::invalid(format!(
            "concatenated length {combined} exceeds maximum {max_len}"
        )));
    }
    let offset = s1.tokens.len();
    let mut tokens = s1.tokens.clone();
    tokens.extend(s2.tokens.iter().cloned());
    let mut mentions = s1.mentions.clone();
    mentions.extend(s2.mentions.iter().map(|m| Mention {
        start: m.start + offset,
        end: m.end + offset,
        type_name: m.type_name.clone(),
    }));
    Ok(Sentence { tokens, mentions })
}
