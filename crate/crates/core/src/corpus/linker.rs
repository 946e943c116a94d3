//! Deterministic dictionary linker standing in for an external entity-linking
//! service: longest phrase match, left to right, no overlaps.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Candidate, CorpusError, EntitySpan};
use crate::anchor::{tokenize, tokenize_with_offsets};
use crate::ontology::{IcdCode, IcdTable};

/// Lowercase phrase → code.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    phrases: HashMap<Vec<String>, IcdCode>,
    order: Vec<(String, IcdCode)>,
    max_tokens: usize,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a phrase. Matching is on tokens, so spacing and case do not matter.
    pub fn insert(&mut self, phrase: &str, code: IcdCode) -> bool {
        let key = tokenize(phrase);
        if key.is_empty() {
            return false;
        }
        self.max_tokens = self.max_tokens.max(key.len());
        self.order.push((key.join(" "), code.clone()));
        self.phrases.insert(key, code);
        true
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn get(&self, phrase: &str) -> Option<&IcdCode> {
        self.phrases.get(&tokenize(phrase))
    }

    pub fn codes(&self) -> impl Iterator<Item = &IcdCode> {
        self.order.iter().map(|(_, c)| c)
    }

    /// Parses `<phrase>\t<code>` lines.
    pub fn from_tsv(contents: &str) -> Result<Self, CorpusError> {
        let mut lex = Lexicon::new();
        for (idx, line) in contents.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| CorpusError::Lexicon {
                line: idx + 1,
                message,
            };
            let (phrase, code) = line
                .split_once('\t')
                .ok_or_else(|| err("expected <phrase>\\t<code>".into()))?;
            let code = IcdCode::parse(code).map_err(|e| err(e.to_string()))?;
            if !lex.insert(phrase, code) {
                return Err(err("empty phrase".into()));
            }
        }
        Ok(lex)
    }

    pub fn to_tsv(&self) -> String {
        self.order
            .iter()
            .map(|(p, c)| format!("{p}\t{c}\n"))
            .collect()
    }
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon, CorpusError> {
    let path = path.as_ref();
    let contents = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Lexicon::from_tsv(&contents)
}

/// Tags every lexicon phrase in `text` and links it to its code.
///
/// Entities are numbered `e1`, `e2`, ... in text order; candidates carry no
/// gold rank.
pub fn dictionary_link(
    text: &str,
    lexicon: &Lexicon,
    table: &IcdTable,
) -> Result<(Vec<EntitySpan>, Vec<Candidate>), CorpusError> {
    if let Some(code) = lexicon.codes().find(|c| !table.contains(c)) {
        return Err(CorpusError::UnknownCodeInLexicon(code.clone()));
    }
    let tokens = tokenize_with_offsets(text);
    let words: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
    let mut entities = Vec::new();
    let mut candidates = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = (1..=lexicon.max_tokens.min(tokens.len() - i))
            .rev()
            .find_map(|len| lexicon.phrases.get(&words[i..i + len]).map(|c| (len, c)));
        match longest {
            Some((len, code)) => {
                let id = format!("e{}", entities.len() + 1);
                let (start, end) = (tokens[i].start, tokens[i + len - 1].end);
                entities.push(
                    EntitySpan::new(&id, start, end, text).expect("token offsets lie inside text"),
                );
                candidates.push(Candidate {
                    entity_id: id,
                    code: code.clone(),
                    gold_rank: None,
                });
                i += len;
            }
            None => i += 1,
        }
    }
    Ok((entities, candidates))
}
