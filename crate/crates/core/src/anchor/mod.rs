//! Tokenization, vocabulary, entity context windows and model input assembly.
//!
//! Every architecture reads one of two layouts:
//!
//! ```text
//! candidate level: [CLS] desc [SEP] left [E] entity [/E] right [SEP]
//! document level:  [CLS] desc_1 [CLS] desc_2 ... [SEP] document tokens
//! ```

mod tokenize;
mod vocab;

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::ontology::{IcdCode, IcdTable};

pub use tokenize::{split_sentences, tokenize, tokenize_with_offsets, Token};
pub use vocab::{build_vocab, Vocab, CLS, ENT_CLOSE, ENT_OPEN, PAD, RESERVED, SEP, UNK};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnchorError {
    #[error("no description for code {0}")]
    MissingDescription(IcdCode),
    #[error("description and entity need {needed} tokens but max_len is {max_len}")]
    EntityTooLong { needed: usize, max_len: usize },
    #[error("no candidates: {0}")]
    NoCandidates(String),
    #[error("candidate index {0} out of range")]
    CandidateOutOfRange(usize),
    #[error("entity {0} does not resolve")]
    UnresolvedEntity(String),
    #[error("entity {0} covers no tokens")]
    EmptyEntity(String),
    #[error("invalid anchor config: {0}")]
    InvalidConfig(&'static str),
    #[error("malformed vocabulary line {line}")]
    VocabFormat { line: usize },
}

/// Window and length limits for model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Context tokens kept on each side of the entity.
    pub window: usize,
    /// Cap on candidate-level sequences.
    pub max_len: usize,
    /// Cap on document-level sequences.
    pub doc_max_len: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            window: 64,
            max_len: 256,
            doc_max_len: 2048,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<(), AnchorError> {
        if self.max_len < 8 {
            return Err(AnchorError::InvalidConfig("max_len must be at least 8"));
        }
        if self.doc_max_len < 2 {
            return Err(AnchorError::InvalidConfig("doc_max_len must be at least 2"));
        }
        Ok(())
    }
}

/// Token ids of a document plus the token range covered by each entity.
#[derive(Debug, Clone)]
pub struct TokenizedDocument {
    pub ids: Vec<usize>,
    entity_ranges: BTreeMap<String, Range<usize>>,
}

impl TokenizedDocument {
    pub fn new(doc: &Document, vocab: &Vocab) -> Result<Self, AnchorError> {
        let tokens = tokenize_with_offsets(&doc.text);
        let ids = tokens.iter().map(|t| vocab.id(&t.text)).collect();
        let mut entity_ranges = BTreeMap::new();
        for ent in &doc.entities {
            let first = tokens.partition_point(|t| t.end <= ent.start);
            let last = tokens.partition_point(|t| t.start < ent.end);
            if first >= last {
                return Err(AnchorError::EmptyEntity(ent.id.clone()));
            }
            entity_ranges.insert(ent.id.clone(), first..last);
        }
        Ok(TokenizedDocument { ids, entity_ranges })
    }

    pub fn entity_range(&self, entity_id: &str) -> Option<Range<usize>> {
        self.entity_ranges.get(entity_id).cloned()
    }
}

/// One candidate's model input pieces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchoredContext {
    /// Index into the document's candidate list.
    pub candidate: usize,
    pub entity_id: String,
    pub code: IcdCode,
    pub desc_ids: Vec<usize>,
    pub left_ids: Vec<usize>,
    pub entity_ids: Vec<usize>,
    pub right_ids: Vec<usize>,
}

pub fn description_ids(
    code: &IcdCode,
    table: &IcdTable,
    vocab: &Vocab,
) -> Result<Vec<usize>, AnchorError> {
    let desc = table
        .description(code)
        .ok_or_else(|| AnchorError::MissingDescription(code.clone()))?;
    Ok(vocab.encode(desc))
}

/// Cuts the window around a candidate's entity.
pub fn anchor(
    doc: &Document,
    candidate: usize,
    table: &IcdTable,
    vocab: &Vocab,
    config: &AnchorConfig,
) -> Result<AnchoredContext, AnchorError> {
    let tokenized = TokenizedDocument::new(doc, vocab)?;
    anchor_tokenized(doc, &tokenized, candidate, table, vocab, config)
}

pub fn anchor_tokenized(
    doc: &Document,
    tokenized: &TokenizedDocument,
    candidate: usize,
    table: &IcdTable,
    vocab: &Vocab,
    config: &AnchorConfig,
) -> Result<AnchoredContext, AnchorError> {
    let cand = doc
        .candidates
        .get(candidate)
        .ok_or(AnchorError::CandidateOutOfRange(candidate))?;
    let range = tokenized
        .entity_range(&cand.entity_id)
        .ok_or_else(|| AnchorError::UnresolvedEntity(cand.entity_id.clone()))?;
    let desc_ids = description_ids(&cand.code, table, vocab)?;
    let ids = &tokenized.ids;
    let left_start = range.start.saturating_sub(config.window);
    let right_end = (range.end + config.window).min(ids.len());
    Ok(AnchoredContext {
        candidate,
        entity_id: cand.entity_id.clone(),
        code: cand.code.clone(),
        desc_ids,
        left_ids: ids[left_start..range.start].to_vec(),
        entity_ids: ids[range.clone()].to_vec(),
        right_ids: ids[range.end..right_end].to_vec(),
    })
}

/// Lays out `[CLS] desc [SEP] left [E] entity [/E] right [SEP]`.
///
/// Over-long inputs lose context tokens farthest from the entity, split
/// evenly between sides; description and entity tokens are never cut.
pub fn assemble_base_input(
    ctx: &AnchoredContext,
    config: &AnchorConfig,
) -> Result<Vec<usize>, AnchorError> {
    let fixed = ctx.desc_ids.len() + ctx.entity_ids.len() + 5;
    if fixed > config.max_len {
        return Err(AnchorError::EntityTooLong {
            needed: fixed,
            max_len: config.max_len,
        });
    }
    let budget = config.max_len - fixed;
    let (l, r) = (ctx.left_ids.len(), ctx.right_ids.len());
    let (keep_l, keep_r) = if l + r <= budget {
        (l, r)
    } else {
        let half_l = budget / 2;
        let half_r = budget - half_l;
        if l < half_l {
            (l, budget - l)
        } else if r < half_r {
            (budget - r, r)
        } else {
            (half_l, half_r)
        }
    };
    let mut seq = Vec::with_capacity(fixed + keep_l + keep_r);
    seq.push(CLS);
    seq.extend_from_slice(&ctx.desc_ids);
    seq.push(SEP);
    seq.extend_from_slice(&ctx.left_ids[l - keep_l..]);
    seq.push(ENT_OPEN);
    seq.extend_from_slice(&ctx.entity_ids);
    seq.push(ENT_CLOSE);
    seq.extend_from_slice(&ctx.right_ids[..keep_r]);
    seq.push(SEP);
    Ok(seq)
}

/// `[CLS] desc [SEP]`: a code's description on its own.
pub fn assemble_code_input(desc_ids: &[usize], config: &AnchorConfig) -> Vec<usize> {
    let keep = desc_ids.len().min(config.max_len.saturating_sub(2));
    let mut seq = Vec::with_capacity(keep + 2);
    seq.push(CLS);
    seq.extend_from_slice(&desc_ids[..keep]);
    seq.push(SEP);
    seq
}

/// Document-level input with code prefixes and anchor bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentAssembly {
    pub ids: Vec<usize>,
    /// Codes in lexicographic order with the index of their `[CLS]`.
    pub code_anchors: Vec<(IcdCode, usize)>,
    /// Surviving entities in document order with the index of their first token.
    pub entity_anchors: Vec<(String, usize)>,
    pub global_attention: BTreeSet<usize>,
    /// Document tokens dropped by `doc_max_len`.
    pub truncated_tokens: usize,
}

impl DocumentAssembly {
    pub fn code_anchor(&self, code: &IcdCode) -> Option<usize> {
        self.code_anchors
            .iter()
            .find(|(c, _)| c == code)
            .map(|(_, i)| *i)
    }

    pub fn entity_anchor(&self, entity_id: &str) -> Option<usize> {
        self.entity_anchors
            .iter()
            .find(|(e, _)| e == entity_id)
            .map(|(_, i)| *i)
    }
}

pub fn assemble_document_input(
    doc: &Document,
    table: &IcdTable,
    vocab: &Vocab,
    config: &AnchorConfig,
) -> Result<DocumentAssembly, AnchorError> {
    let tokenized = TokenizedDocument::new(doc, vocab)?;
    assemble_document_tokenized(doc, &tokenized, table, vocab, config)
}

pub fn assemble_document_tokenized(
    doc: &Document,
    tokenized: &TokenizedDocument,
    table: &IcdTable,
    vocab: &Vocab,
    config: &AnchorConfig,
) -> Result<DocumentAssembly, AnchorError> {
    let codes: BTreeSet<&IcdCode> = doc.candidates.iter().map(|c| &c.code).collect();
    if codes.is_empty() {
        return Err(AnchorError::NoCandidates(format!(
            "document {} has no candidate codes",
            doc.id
        )));
    }
    let mut ids = Vec::new();
    let mut code_anchors = Vec::with_capacity(codes.len());
    for code in codes {
        code_anchors.push((code.clone(), ids.len()));
        ids.push(CLS);
        ids.extend(description_ids(code, table, vocab)?);
    }
    ids.push(SEP);
    if ids.len() > config.doc_max_len {
        return Err(AnchorError::NoCandidates(format!(
            "code prefixes need {} tokens but doc_max_len is {}",
            ids.len(),
            config.doc_max_len
        )));
    }
    let offset = ids.len();
    let room = config.doc_max_len - offset;
    let kept = tokenized.ids.len().min(room);
    ids.extend_from_slice(&tokenized.ids[..kept]);

    let mut entity_anchors: Vec<(String, usize)> = doc
        .entities
        .iter()
        .filter_map(|e| {
            let range = tokenized.entity_range(&e.id)?;
            (range.start < kept).then(|| (e.id.clone(), offset + range.start))
        })
        .collect();
    entity_anchors.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));

    let global_attention = code_anchors
        .iter()
        .map(|(_, i)| *i)
        .chain(entity_anchors.iter().map(|(_, i)| *i))
        .collect();
    Ok(DocumentAssembly {
        ids,
        code_anchors,
        entity_anchors,
        global_attention,
        truncated_tokens: tokenized.ids.len() - kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Candidate, EntitySpan, Split};

    fn doc(text: &str, spans: &[(&str, usize, usize, &str)]) -> Document {
        let entities = spans
            .iter()
            .map(|(id, s, e, _)| EntitySpan::new(id, *s, *e, text).unwrap())
            .collect();
        let candidates = spans
            .iter()
            .map(|(id, _, _, code)| Candidate {
                entity_id: id.to_string(),
                code: IcdCode::parse(code).unwrap(),
                gold_rank: None,
            })
            .collect();
        Document {
            id: "d".into(),
            split: Split::Train,
            text: text.into(),
            entities,
            candidates,
        }
    }

    fn table() -> IcdTable {
        IcdTable::from_tsv("F983\tPica of infancy and childhood\nR112\tNausea with vomiting, unspecified\n")
            .unwrap()
    }

    fn vocab_for(d: &Document, t: &IcdTable) -> Vocab {
        let corpus = crate::corpus::Corpus::new(vec![d.clone()], "test").unwrap();
        build_vocab(&corpus, t, 1)
    }

    #[test]
    fn window_clipping() {
        let d = doc("a b c ent d e f", &[("e1", 6, 9, "F983")]);
        let t = table();
        let v = vocab_for(&d, &t);
        let cfg = AnchorConfig { window: 2, ..Default::default() };
        let ctx = anchor(&d, 0, &t, &v, &cfg).unwrap();
        assert_eq!(ctx.left_ids, vec![v.id("b"), v.id("c")]);
        assert_eq!(ctx.entity_ids, vec![v.id("ent")]);
        assert_eq!(ctx.right_ids, vec![v.id("d"), v.id("e")]);
        assert_eq!(ctx.desc_ids, v.encode("Pica of infancy and childhood"));

        let d = doc("pica seen", &[("e1", 0, 4, "F983")]);
        let v = vocab_for(&d, &t);
        let ctx = anchor(&d, 0, &t, &v, &cfg).unwrap();
        assert!(ctx.left_ids.is_empty());
        assert_eq!(ctx.right_ids, vec![v.id("seen")]);
    }

    #[test]
    fn missing_description() {
        let d = doc("x y", &[("e1", 0, 1, "Z99")]);
        let t = table();
        let v = vocab_for(&d, &t);
        assert!(matches!(
            anchor(&d, 0, &t, &v, &AnchorConfig::default()),
            Err(AnchorError::MissingDescription(_))
        ));
    }

    fn ctx(desc: usize, left: usize, ent: usize, right: usize) -> AnchoredContext {
        AnchoredContext {
            candidate: 0,
            entity_id: "e".into(),
            code: IcdCode::parse("F983").unwrap(),
            desc_ids: (100..100 + desc).collect(),
            left_ids: (200..200 + left).collect(),
            entity_ids: (300..300 + ent).collect(),
            right_ids: (400..400 + right).collect(),
        }
    }

    #[test]
    fn base_layout() {
        let c = ctx(2, 1, 1, 0);
        let seq = assemble_base_input(&c, &AnchorConfig::default()).unwrap();
        assert_eq!(seq, vec![CLS, 100, 101, SEP, 200, ENT_OPEN, 300, ENT_CLOSE, SEP]);
    }

    #[test]
    fn truncation_keeps_desc_and_entity() {
        let c = ctx(3, 20, 2, 20);
        let cfg = AnchorConfig { max_len: 16, ..Default::default() };
        let seq = assemble_base_input(&c, &cfg).unwrap();
        assert_eq!(seq.len(), 16);
        for id in c.desc_ids.iter().chain(&c.entity_ids) {
            assert!(seq.contains(id));
        }
        // 16 - (3 + 2 + 5) = 6 window tokens, nearest to the entity, split 3/3
        assert_eq!(&seq[5..8], &[217, 218, 219]);
        assert_eq!(&seq[12..15], &[400, 401, 402]);

        let short_left = ctx(3, 1, 2, 20);
        let seq = assemble_base_input(&short_left, &cfg).unwrap();
        assert_eq!(seq.len(), 16);
        assert!(seq.contains(&200) && seq.contains(&404) && !seq.contains(&405));

        let too_long = ctx(10, 0, 5, 0);
        assert_eq!(
            assemble_base_input(&too_long, &cfg),
            Err(AnchorError::EntityTooLong { needed: 20, max_len: 16 })
        );
    }

    #[test]
    fn document_assembly_layout() {
        let d = doc(
            "pica then nausea and more words here ok",
            &[("e1", 0, 4, "F983"), ("e2", 10, 16, "R112")],
        );
        let t = table();
        let v = vocab_for(&d, &t);
        let asm = assemble_document_input(&d, &t, &v, &AnchorConfig::default()).unwrap();
        let f983_len = v.encode("Pica of infancy and childhood").len();
        assert_eq!(asm.code_anchors[0].1, 0);
        assert_eq!(asm.code_anchors[1].1, 1 + f983_len);
        let r112_len = v.encode("Nausea with vomiting, unspecified").len();
        let offset = 2 + f983_len + r112_len + 1;
        assert_eq!(asm.ids[offset - 1], SEP);
        assert_eq!(asm.entity_anchors, vec![("e1".into(), offset), ("e2".into(), offset + 2)]);
        assert_eq!(asm.global_attention.len(), 4);
        for (_, i) in &asm.code_anchors {
            assert_eq!(asm.ids[*i], CLS);
        }

        let cfg = AnchorConfig { doc_max_len: offset + 1, ..Default::default() };
        let asm = assemble_document_input(&d, &t, &v, &cfg).unwrap();
        assert_eq!(asm.entity_anchors.len(), 1);
        assert_eq!(asm.ids.len(), offset + 1);

        let cfg = AnchorConfig { doc_max_len: 4, ..Default::default() };
        assert!(matches!(
            assemble_document_input(&d, &t, &v, &cfg),
            Err(AnchorError::NoCandidates(_))
        ));
    }
}
