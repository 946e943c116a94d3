//! Annotated documents: entities, linked candidate codes and gold billing ranks.
//!
//! Gold relevance is code-level. Every candidate that links to the same code in
//! a document carries the same `gold_rank`; rank 1 is the primary code, ranks
//! 2..=12 are secondary, and a missing rank means "not relevant to billing".

mod linker;
mod stats;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::IcdCode;

pub use linker::{dictionary_link, load_lexicon, Lexicon};
pub use stats::{code_mismatch_stats, split_stats, MismatchStats, PerSplit, SplitStats};

pub const MAX_RANK: u8 = 12;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: document {doc}: gold_rank {rank} outside 1..=12")]
    RankOutOfRange { line: usize, doc: String, rank: i64 },
    #[error("line {line}: document {doc}: candidate references unknown entity {entity}")]
    DanglingEntityRef {
        line: usize,
        doc: String,
        entity: String,
    },
    #[error("line {line}: document {doc}: entity {entity} span outside text")]
    SpanOutOfBounds {
        line: usize,
        doc: String,
        entity: String,
    },
    #[error("line {line}: document {doc}: code {code} has conflicting gold ranks")]
    InconsistentCodeRank {
        line: usize,
        doc: String,
        code: String,
    },
    #[error("line {line}: document {doc}: more than one primary code")]
    MultiplePrimary { line: usize, doc: String },
    #[error("line {line}: duplicate document id {doc}")]
    DuplicateDocument { line: usize, doc: String },
    #[error("line {line}: document {doc}: duplicate entity id {entity}")]
    DuplicateEntity {
        line: usize,
        doc: String,
        entity: String,
    },
    #[error("lexicon code {0} is not in the code table")]
    UnknownCodeInLexicon(IcdCode),
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    /// 1-based input line the error refers to, when there is one.
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::Schema { line, .. }
            | CorpusError::RankOutOfRange { line, .. }
            | CorpusError::DanglingEntityRef { line, .. }
            | CorpusError::SpanOutOfBounds { line, .. }
            | CorpusError::InconsistentCodeRank { line, .. }
            | CorpusError::MultiplePrimary { line, .. }
            | CorpusError::DuplicateDocument { line, .. }
            | CorpusError::DuplicateEntity { line, .. }
            | CorpusError::Lexicon { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Billing relevance of a candidate code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relevance {
    Primary,
    Secondary,
    Irrelevant,
}

impl Relevance {
    pub fn from_rank(rank: Option<u8>) -> Self {
        match rank {
            Some(1) => Relevance::Primary,
            Some(_) => Relevance::Secondary,
            None => Relevance::Irrelevant,
        }
    }

    pub fn is_relevant(&self) -> bool {
        !matches!(self, Relevance::Irrelevant)
    }
}

/// A tagged medical-condition mention. Offsets are in characters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntitySpan {
    pub id: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl EntitySpan {
    /// Builds a span over `text[start..end]`, or `None` if out of bounds.
    pub fn new(id: &str, start: usize, end: usize, text: &str) -> Option<Self> {
        if start >= end {
            return None;
        }
        let surface: String = text.chars().skip(start).take(end - start).collect();
        if surface.chars().count() != end - start {
            return None;
        }
        Some(EntitySpan {
            id: id.to_string(),
            start,
            end,
            surface,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub entity_id: String,
    pub code: IcdCode,
    pub gold_rank: Option<u8>,
}

impl Candidate {
    pub fn relevance(&self) -> Relevance {
        Relevance::from_rank(self.gold_rank)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub split: Split,
    pub text: String,
    pub entities: Vec<EntitySpan>,
    pub candidates: Vec<Candidate>,
}

impl Document {
    pub fn entity(&self, id: &str) -> Option<&EntitySpan> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// Unique candidate codes in lexicographic order.
    pub fn unique_codes(&self) -> BTreeSet<IcdCode> {
        self.candidates.iter().map(|c| c.code.clone()).collect()
    }

    /// Code-level gold relevance for every candidate code.
    pub fn code_relevance(&self) -> BTreeMap<IcdCode, Relevance> {
        self.candidates
            .iter()
            .map(|c| (c.code.clone(), c.relevance()))
            .collect()
    }

    pub fn gold_codes(&self) -> BTreeSet<IcdCode> {
        self.candidates
            .iter()
            .filter(|c| c.gold_rank.is_some())
            .map(|c| c.code.clone())
            .collect()
    }

    pub fn primary_code(&self) -> Option<&IcdCode> {
        self.candidates
            .iter()
            .find(|c| c.gold_rank == Some(1))
            .map(|c| &c.code)
    }

    /// Partitions candidates by code; each group follows entity order in the text.
    pub fn group_by_code(&self) -> BTreeMap<IcdCode, Vec<&Candidate>> {
        let position: BTreeMap<&str, (usize, usize)> = self
            .entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.as_str(), (e.start, i)))
            .collect();
        let mut order: Vec<&Candidate> = self.candidates.iter().collect();
        order.sort_by_key(|c| position.get(c.entity_id.as_str()).copied());
        let mut groups: BTreeMap<IcdCode, Vec<&Candidate>> = BTreeMap::new();
        for cand in order {
            groups.entry(cand.code.clone()).or_default().push(cand);
        }
        groups
    }

    fn validate(&self, line: usize) -> Result<(), CorpusError> {
        let doc = || self.id.clone();
        let text_len = self.text.chars().count();
        let mut ids = HashSet::new();
        for ent in &self.entities {
            if !ids.insert(ent.id.as_str()) {
                return Err(CorpusError::DuplicateEntity {
                    line,
                    doc: doc(),
                    entity: ent.id.clone(),
                });
            }
            if ent.start >= ent.end || ent.end > text_len {
                return Err(CorpusError::SpanOutOfBounds {
                    line,
                    doc: doc(),
                    entity: ent.id.clone(),
                });
            }
        }
        let mut ranks: BTreeMap<&IcdCode, Option<u8>> = BTreeMap::new();
        for cand in &self.candidates {
            if !ids.contains(cand.entity_id.as_str()) {
                return Err(CorpusError::DanglingEntityRef {
                    line,
                    doc: doc(),
                    entity: cand.entity_id.clone(),
                });
            }
            if let Some(rank) = cand.gold_rank {
                if !(1..=MAX_RANK).contains(&rank) {
                    return Err(CorpusError::RankOutOfRange {
                        line,
                        doc: doc(),
                        rank: rank.into(),
                    });
                }
            }
            match ranks.get(&cand.code) {
                Some(prev) if *prev != cand.gold_rank => {
                    return Err(CorpusError::InconsistentCodeRank {
                        line,
                        doc: doc(),
                        code: cand.code.to_string(),
                    })
                }
                _ => {
                    ranks.insert(&cand.code, cand.gold_rank);
                }
            }
        }
        if ranks.values().filter(|r| **r == Some(1)).count() > 1 {
            return Err(CorpusError::MultiplePrimary { line, doc: doc() });
        }
        Ok(())
    }
}

/// A validated collection of documents with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    pub provenance: String,
}

impl Corpus {
    /// Validates every document; errors report 1-based document positions.
    pub fn new(documents: Vec<Document>, provenance: &str) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (idx, doc) in documents.iter().enumerate() {
            doc.validate(idx + 1)?;
            if !seen.insert(doc.id.clone()) {
                return Err(CorpusError::DuplicateDocument {
                    line: idx + 1,
                    doc: doc.id.clone(),
                });
            }
        }
        Ok(Corpus {
            documents,
            provenance: provenance.to_string(),
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Document> {
        self.documents.iter().filter(move |d| d.split == split)
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Gold-relevant code frequencies (documents per code) over one split.
    pub fn gold_code_frequencies(&self, split: Split) -> BTreeMap<IcdCode, usize> {
        let mut freq = BTreeMap::new();
        for doc in self.split(split) {
            for code in doc.gold_codes() {
                *freq.entry(code).or_default() += 1;
            }
        }
        freq
    }

    pub fn from_jsonl(contents: &str, provenance: &str) -> Result<Self, CorpusError> {
        let mut documents = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in contents.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawDocument =
                serde_json::from_str(line).map_err(|e| CorpusError::Schema {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let doc = raw.into_document(line_no)?;
            doc.validate(line_no)?;
            if !seen.insert(doc.id.clone()) {
                return Err(CorpusError::DuplicateDocument {
                    line: line_no,
                    doc: doc.id,
                });
            }
            documents.push(doc);
        }
        Ok(Corpus {
            documents,
            provenance: provenance.to_string(),
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            let raw = RawDocument::from(doc);
            out.push_str(&serde_json::to_string(&raw).expect("document serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let contents = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Corpus::from_jsonl(&contents, &path.display().to_string())
}

pub fn save_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, corpus.to_jsonl()).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    id: String,
    split: Split,
    text: String,
    entities: Vec<RawEntity>,
    candidates: Vec<RawCandidate>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntity {
    id: String,
    start: usize,
    end: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCandidate {
    entity_id: String,
    code: String,
    gold_rank: Option<i64>,
}

impl RawDocument {
    fn into_document(self, line: usize) -> Result<Document, CorpusError> {
        let mut entities = Vec::with_capacity(self.entities.len());
        for e in self.entities {
            let span = EntitySpan::new(&e.id, e.start, e.end, &self.text).ok_or_else(|| {
                CorpusError::SpanOutOfBounds {
                    line,
                    doc: self.id.clone(),
                    entity: e.id.clone(),
                }
            })?;
            entities.push(span);
        }
        let mut candidates = Vec::with_capacity(self.candidates.len());
        for c in self.candidates {
            let code = IcdCode::parse(&c.code).map_err(|e| CorpusError::Schema {
                line,
                message: e.to_string(),
            })?;
            let gold_rank = match c.gold_rank {
                None => None,
                Some(r) if (1..=i64::from(MAX_RANK)).contains(&r) => Some(r as u8),
                Some(r) => {
                    return Err(CorpusError::RankOutOfRange {
                        line,
                        doc: self.id.clone(),
                        rank: r,
                    })
                }
            };
            candidates.push(Candidate {
                entity_id: c.entity_id,
                code,
                gold_rank,
            });
        }
        Ok(Document {
            id: self.id,
            split: self.split,
            text: self.text,
            entities,
            candidates,
        })
    }
}

impl From<&Document> for RawDocument {
    fn from(doc: &Document) -> Self {
        RawDocument {
            id: doc.id.clone(),
            split: doc.split,
            text: doc.text.clone(),
            entities: doc
                .entities
                .iter()
                .map(|e| RawEntity {
                    id: e.id.clone(),
                    start: e.start,
                    end: e.end,
                })
                .collect(),
            candidates: doc
                .candidates
                .iter()
                .map(|c| RawCandidate {
                    entity_id: c.entity_id.clone(),
                    code: c.code.to_string(),
                    gold_rank: c.gold_rank.map(i64::from),
                })
                .collect(),
        }
    }
}
