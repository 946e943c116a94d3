use std::collections::{BTreeMap, BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use super::tokenize::tokenize;
use super::AnchorError;
use crate::corpus::{Corpus, Split};
use crate::ontology::IcdTable;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const ENT_OPEN: usize = 4;
pub const ENT_CLOSE: usize = 5;

pub const RESERVED: [&str; 6] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[E]", "[/E]"];

/// Word-level vocabulary with fixed reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

impl Vocab {
    fn from_tokens(words: impl IntoIterator<Item = String>, min_freq: usize) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            tokens,
            index,
            min_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// `<token>\t<id>` lines, reserved tokens first.
    pub fn to_tsv(&self) -> String {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{t}\t{i}\n"))
            .collect()
    }

    pub fn from_tsv(contents: &str) -> Result<Self, AnchorError> {
        let mut words = Vec::new();
        for (idx, line) in contents.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = || AnchorError::VocabFormat { line: idx + 1 };
            let (token, id) = line.split_once('\t').ok_or_else(bad)?;
            let id: usize = id.trim().parse().map_err(|_| bad())?;
            if id != idx {
                return Err(bad());
            }
            if id < RESERVED.len() {
                if token != RESERVED[id] {
                    return Err(bad());
                }
            } else {
                words.push(token.to_string());
            }
        }
        Ok(Vocab::from_tokens(words, 1))
    }

    /// Hex SHA-256 of the serialized vocabulary.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }
}

/// Builds the vocabulary from train-split text and every code description.
///
/// Train tokens need at least `min_freq` occurrences; description tokens are
/// always kept so codes never seen in training still get real ids.
pub fn build_vocab(corpus: &Corpus, table: &IcdTable, min_freq: usize) -> Vocab {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus.split(Split::Train) {
        for tok in tokenize(&doc.text) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut words: BTreeSet<String> = counts
        .into_iter()
        .filter(|(_, n)| *n >= min_freq.max(1))
        .map(|(t, _)| t)
        .collect();
    for entry in table.iter() {
        words.extend(tokenize(&entry.description));
    }
    for reserved in RESERVED {
        words.remove(reserved);
    }
    Vocab::from_tokens(words, min_freq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_fixed() {
        let v = Vocab::from_tokens(vec!["a".into()], 1);
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(r), i);
        }
        assert_eq!(v.id("a"), 6);
        assert_eq!(v.id("zzz"), UNK);
    }

    #[test]
    fn tsv_round_trip() {
        let v = Vocab::from_tokens(vec!["alpha".into(), "beta".into()], 1);
        let back = Vocab::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(back.tokens, v.tokens);
        assert_eq!(back.hash(), v.hash());
        assert!(v.to_tsv().starts_with("[PAD]\t0\n[UNK]\t1\n"));
        assert!(Vocab::from_tsv("[PAD]\t0\nx\t5\n").is_err());
    }
}
