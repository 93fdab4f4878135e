//! Token vocabulary. Ids 0-2 are reserved (UNK, BOS, SEP); corpus tokens
//! follow in sorted order so builds are deterministic.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const UNK_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const SEP_ID: usize = 2;

pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<bos>";
pub const SEP_TOKEN: &str = "<sep>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Collect every distinct training token after the reserved entries.
    pub fn build(corpus: &Corpus) -> Result<Self> {
        let mut tokens = vec![
            UNK_TOKEN.to_string(),
            BOS_TOKEN.to_string(),
            SEP_TOKEN.to_string(),
        ];
        let mut seen: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
        for (_, sent) in corpus.sentences() {
            for t in &sent.tokens {
                if t == UNK_TOKEN || t == BOS_TOKEN || t == SEP_TOKEN {
                    return Err(Error::invalid(format!(
                        "corpus token {t:?} collides with a reserved vocabulary entry"
                    )));
                }
                seen.insert(t);
            }
        }
        tokens.extend(seen.into_iter().map(|s| s.to_string()));
        Vocab::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token id, falling back to UNK for unseen tokens.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        if tokens.len() < 3
            || tokens[UNK_ID] != UNK_TOKEN
            || tokens[BOS_ID] != BOS_TOKEN
            || tokens[SEP_ID] != SEP_TOKEN
        {
            return Err(Error::invalid(
                "vocabulary file must start with the reserved <unk>, <bos>, <sep> entries",
            ));
        }
        Vocab::from_tokens(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Sentence};

    fn corpus_of(tokens: &[&str]) -> Corpus {
        Corpus {
            documents: vec![Document {
                id: "d0".into(),
                domain: "review".into(),
                sentences: vec![Sentence {
                    tokens: tokens.iter().map(|s| s.to_string()).collect(),
                    mentions: vec![],
                }],
            }],
        }
    }

    #[test]
    fn reserved_ids_fixed_and_tokens_sorted() {
        let v = Vocab::build(&corpus_of(&["zebra", "apple", "apple"])).unwrap();
        assert_eq!(v.id("<unk>"), UNK_ID);
        assert_eq!(v.token(BOS_ID), BOS_TOKEN);
        assert_eq!(v.token(SEP_ID), SEP_TOKEN);
        assert_eq!(v.token(3), "apple");
        assert_eq!(v.token(4), "zebra");
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn unknown_token_maps_to_unk() {
        let v = Vocab::build(&corpus_of(&["a"])).unwrap();
        assert_eq!(v.id("never-seen"), UNK_ID);
        assert_eq!(v.encode(&["a".into(), "b".into()]), vec![3, 0]);
    }

    #[test]
    fn file_round_trip_line_number_is_id() {
        let dir = std::env::temp_dir().join("edseq_vocab_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("vocab.txt");
        let v = Vocab::build(&corpus_of(&["m", "k"])).unwrap();
        v.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "<unk>");
        assert_eq!(lines[3], "k");
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(loaded, v);
    }

    #[test]
    fn reserved_surface_collision_rejected() {
        assert!(Vocab::build(&corpus_of(&["<bos>"])).is_err());
    }
}
