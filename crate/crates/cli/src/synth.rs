//! Synthetic corpora with known answers.
//!
//! `separable`: each entity window carries cue words that decide its code's
//! relevance (two affirming cues for the primary code, one for secondary
//! codes, a negation for irrelevant ones).
//!
//! `evidence-count`: windows hold only neutral filler. A code is relevant iff
//! it is mentioned at least twice (primary three times, secondary twice,
//! irrelevant once), so no single window can decide it.
//!
//! A fraction of codes is held out of training and used only in validation
//! and test documents.

use std::collections::{BTreeMap, BTreeSet};

use anchor_rank::corpus::{Candidate, Corpus, Document, EntitySpan, Lexicon, Split};
use anchor_rank::nnkit::SeededRng;
use anchor_rank::ontology::{IcdCode, IcdTable};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Separable,
    EvidenceCount,
}

impl std::str::FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "separable" => Ok(TaskKind::Separable),
            "evidence-count" => Ok(TaskKind::EvidenceCount),
            other => Err(format!("unknown task {other:?} (separable|evidence-count)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Size of the code inventory.
    pub codes: usize,
    pub train_docs: usize,
    pub validation_docs: usize,
    pub test_docs: usize,
    /// Fraction of codes that never occur in training documents.
    pub unseen_fraction: f64,
    /// Distinct codes per document, inclusive range.
    pub min_codes_per_doc: usize,
    pub max_codes_per_doc: usize,
    pub task: TaskKind,
    /// Filler tokens on each side of a mention; keep it at least the anchor
    /// window so windows never see a neighbouring mention.
    pub filler: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            codes: 40,
            train_docs: 500,
            validation_docs: 100,
            test_docs: 100,
            unseen_fraction: 0.3,
            min_codes_per_doc: 3,
            max_codes_per_doc: 5,
            task: TaskKind::Separable,
            filler: 4,
        }
    }
}

impl SynthConfig {
    /// Number of held-out codes.
    pub fn held_out(&self) -> usize {
        (self.unseen_fraction * self.codes as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::Config(m));
        if self.codes == 0 || self.codes > MAX_CODES {
            return fail(format!("codes must be in 1..={MAX_CODES}"));
        }
        if self.train_docs == 0 || self.validation_docs == 0 || self.test_docs == 0 {
            return fail("every split needs at least one document".into());
        }
        if !(0.0..1.0).contains(&self.unseen_fraction) {
            return fail("unseen_fraction must be in [0, 1)".into());
        }
        if self.min_codes_per_doc == 0 || self.min_codes_per_doc > self.max_codes_per_doc {
            return fail("codes per document must satisfy 1 <= min <= max".into());
        }
        let seen = self.codes - self.held_out();
        if self.max_codes_per_doc > seen {
            return fail(format!(
                "max_codes_per_doc {} exceeds the {seen} codes available for training",
                self.max_codes_per_doc
            ));
        }
        if self.max_codes_per_doc > 12 {
            return fail("at most 12 codes per document".into());
        }
        if self.filler == 0 {
            return fail("filler must be at least 1".into());
        }
        Ok(())
    }
}

const LETTERS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTVWXYZ";
const MAX_CODES: usize = 25 * 100;
const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "nu", "pe", "ra", "si", "to", "vu", "ze", "bo", "da", "fi", "gu", "ho", "je",
];
const ORGANS: [&str; 8] = [
    "liver", "kidney", "lung", "heart", "skin", "bone", "nerve", "blood",
];
const AFFIRM: [&str; 4] = ["confirmed", "active", "treated", "diagnosed"];
const NEGATE: [&str; 4] = ["denies", "negative", "excluded", "absent"];
const FILLER: [&str; 24] = [
    "patient", "seen", "today", "clinic", "follow", "noted", "history", "report", "visit", "exam",
    "reviewed", "records", "plan", "discussed", "with", "family", "the", "and", "was", "at",
    "morning", "stable", "vitals", "chart",
];

fn code_at(i: usize) -> IcdCode {
    let raw = format!("{}{:02}", LETTERS[i / 100] as char, i % 100);
    IcdCode::parse(&raw).expect("generated codes are well formed")
}

/// A pronounceable token unique to code `i`.
fn stem(i: usize) -> String {
    let mut s = String::new();
    let mut n = i;
    for _ in 0..3 {
        s.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    s
}

fn mention(i: usize) -> String {
    format!("{}itis", stem(i))
}

fn description(i: usize) -> String {
    format!("{} disorder of the {}", mention(i), ORGANS[i % ORGANS.len()])
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub corpus: Corpus,
    pub table: IcdTable,
    pub lexicon: Lexicon,
    /// Codes that never occur in training documents.
    pub held_out: BTreeSet<IcdCode>,
}

/// Result of scanning every entity window of an evidence-count corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub windows: usize,
    /// Windows that see more than one mention.
    pub crowded_windows: usize,
    /// Non-mention tokens seen repeatedly, but only in windows of one class.
    pub one_sided_tokens: Vec<String>,
    /// Codes observed with exactly one and with two or more mentions.
    pub codes_with_both_counts: usize,
    pub codes_observed: usize,
}

impl SelfCheck {
    pub fn passed(&self) -> bool {
        self.crowded_windows == 0 && self.one_sided_tokens.is_empty()
    }
}

struct Segment {
    tokens: Vec<String>,
    /// Position of the mention inside `tokens`.
    mention_at: usize,
    code: usize,
}

fn fillers(rng: &mut SeededRng, n: usize) -> Vec<String> {
    (0..n).map(|_| rng.pick(&FILLER).to_string()).collect()
}

fn separable_segment(rng: &mut SeededRng, code: usize, rank: Option<u8>, filler: usize) -> Segment {
    let mut cues = match rank {
        Some(1) => vec![rng.pick(&AFFIRM).to_string(), rng.pick(&AFFIRM).to_string()],
        Some(_) => vec![rng.pick(&AFFIRM).to_string(), rng.pick(&FILLER).to_string()],
        None => vec![rng.pick(&NEGATE).to_string(), rng.pick(&FILLER).to_string()],
    };
    rng.shuffle(&mut cues);
    let mut tokens = fillers(rng, filler);
    tokens.extend(cues);
    let mention_at = tokens.len();
    tokens.push(mention(code));
    tokens.extend(fillers(rng, filler));
    tokens.push(".".into());
    Segment {
        tokens,
        mention_at,
        code,
    }
}

fn plain_segment(rng: &mut SeededRng, code: usize, filler: usize) -> Segment {
    let mut tokens = fillers(rng, filler);
    let mention_at = tokens.len();
    tokens.push(mention(code));
    tokens.extend(fillers(rng, filler));
    tokens.push(".".into());
    Segment {
        tokens,
        mention_at,
        code,
    }
}

fn make_document(
    rng: &mut SeededRng,
    config: &SynthConfig,
    id: String,
    split: Split,
    pool: &[usize],
) -> Document {
    let n = rng.between(config.min_codes_per_doc, config.max_codes_per_doc);
    let mut chosen = pool.to_vec();
    rng.shuffle(&mut chosen);
    chosen.truncate(n);
    // First chosen code is primary; the rest are secondary or irrelevant.
    let mut next_rank = 2u8;
    let ranks: Vec<Option<u8>> = (0..n)
        .map(|i| {
            if i == 0 {
                Some(1)
            } else if rng.chance(0.5) {
                next_rank += 1;
                Some(next_rank - 1)
            } else {
                None
            }
        })
        .collect();
    let mut segments = Vec::new();
    for (&code, &rank) in chosen.iter().zip(&ranks) {
        match config.task {
            TaskKind::Separable => segments.push(separable_segment(rng, code, rank, config.filler)),
            TaskKind::EvidenceCount => {
                let mentions = match rank {
                    Some(1) => 3,
                    Some(_) => 2,
                    None => 1,
                };
                for _ in 0..mentions {
                    segments.push(plain_segment(rng, code, config.filler));
                }
            }
        }
    }
    rng.shuffle(&mut segments);
    let rank_of: BTreeMap<usize, Option<u8>> = chosen.iter().copied().zip(ranks).collect();

    let mut text = String::new();
    let mut entities = Vec::new();
    let mut candidates = Vec::new();
    let mut chars = 0usize;
    for seg in &segments {
        for (t, tok) in seg.tokens.iter().enumerate() {
            if !text.is_empty() {
                text.push(' ');
                chars += 1;
            }
            if t == seg.mention_at {
                let eid = format!("e{}", entities.len() + 1);
                let len = tok.chars().count();
                entities.push(EntitySpan {
                    id: eid.clone(),
                    start: chars,
                    end: chars + len,
                    surface: tok.clone(),
                });
                candidates.push(Candidate {
                    entity_id: eid,
                    code: code_at(seg.code),
                    gold_rank: rank_of[&seg.code],
                });
            }
            text.push_str(tok);
            chars += tok.chars().count();
        }
    }
    Document {
        id,
        split,
        text,
        entities,
        candidates,
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    let mut rng = SeededRng::stream(config.seed, 0);
    let mut order: Vec<usize> = (0..config.codes).collect();
    rng.shuffle(&mut order);
    let held: BTreeSet<usize> = order[..config.held_out()].iter().copied().collect();
    let seen: Vec<usize> = (0..config.codes).filter(|c| !held.contains(c)).collect();
    let all: Vec<usize> = (0..config.codes).collect();

    let mut table = IcdTable::new();
    let mut lexicon = Lexicon::new();
    for i in 0..config.codes {
        table
            .insert(code_at(i), &description(i))
            .expect("generated descriptions are unique and non-empty");
        lexicon.insert(&mention(i), code_at(i));
    }

    let mut documents = Vec::new();
    for (stream, split, count, pool) in [
        (1, Split::Train, config.train_docs, &seen),
        (2, Split::Validation, config.validation_docs, &all),
        (3, Split::Test, config.test_docs, &all),
    ] {
        let mut rng = SeededRng::stream(config.seed, stream);
        for i in 0..count {
            let id = format!("{}-{:04}", split.as_str(), i + 1);
            documents.push(make_document(&mut rng, config, id, split, pool));
        }
    }
    let corpus = Corpus::new(documents, &format!("synth:{:?}:seed={}", config.task, config.seed))
        .expect("generated documents are valid");
    Ok(SynthOutput {
        corpus,
        table,
        lexicon,
        held_out: held.into_iter().map(code_at).collect(),
    })
}

/// Scans every entity window of `window` tokens per side.
pub fn self_check(corpus: &Corpus, window: usize) -> SelfCheck {
    let mut windows = 0;
    let mut crowded = 0;
    let mut by_class: BTreeMap<String, [usize; 2]> = BTreeMap::new();
    let mut counts_seen: BTreeMap<IcdCode, [bool; 2]> = BTreeMap::new();
    for doc in corpus.documents() {
        let tokens: Vec<&str> = doc.text.split(' ').collect();
        // Character offset → token position (tokens are space separated).
        let mut starts = BTreeMap::new();
        let mut at = 0;
        for (i, t) in tokens.iter().enumerate() {
            starts.insert(at, i);
            at += t.chars().count() + 1;
        }
        let mention_pos: BTreeSet<usize> = doc.entities.iter().map(|e| starts[&e.start]).collect();
        let per_code = doc.group_by_code();
        for (code, cands) in &per_code {
            let slot = &mut counts_seen.entry(code.clone()).or_default();
            slot[usize::from(cands.len() >= 2)] = true;
        }
        for cand in &doc.candidates {
            let entity = doc.entity(&cand.entity_id).expect("validated corpus");
            let pos = starts[&entity.start];
            let lo = pos.saturating_sub(window);
            let hi = (pos + window + 1).min(tokens.len());
            windows += 1;
            if (lo..hi).filter(|p| mention_pos.contains(p)).count() > 1 {
                crowded += 1;
            }
            let class = usize::from(cand.relevance().is_relevant());
            for p in (lo..hi).filter(|p| !mention_pos.contains(p)) {
                by_class.entry(tokens[p].to_string()).or_default()[class] += 1;
            }
        }
    }
    let one_sided_tokens = by_class
        .into_iter()
        .filter(|(_, [a, b])| (*a == 0 || *b == 0) && a + b >= 3)
        .map(|(t, _)| t)
        .collect();
    SelfCheck {
        windows,
        crowded_windows: crowded,
        one_sided_tokens,
        codes_with_both_counts: counts_seen.values().filter(|[a, b]| *a && *b).count(),
        codes_observed: counts_seen.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(task: TaskKind) -> SynthConfig {
        SynthConfig {
            codes: 20,
            train_docs: 30,
            validation_docs: 10,
            test_docs: 10,
            task,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small(TaskKind::Separable)).unwrap();
        let b = generate(&small(TaskKind::Separable)).unwrap();
        assert_eq!(a.corpus.to_jsonl(), b.corpus.to_jsonl());
        assert_eq!(a.table.to_tsv(), b.table.to_tsv());
    }

    #[test]
    fn held_out_codes_stay_out_of_training() {
        let cfg = SynthConfig {
            codes: 100,
            max_codes_per_doc: 5,
            ..small(TaskKind::Separable)
        };
        let out = generate(&cfg).unwrap();
        assert_eq!(out.held_out.len(), 30);
        for doc in out.corpus.split(Split::Train) {
            assert!(doc.unique_codes().is_disjoint(&out.held_out));
        }
        for code in &out.held_out {
            assert!(out.table.contains(code));
        }
    }

    #[test]
    fn evidence_count_matches_relevance() {
        let out = generate(&small(TaskKind::EvidenceCount)).unwrap();
        for doc in out.corpus.documents() {
            for (code, cands) in doc.group_by_code() {
                let rel = doc.code_relevance()[&code];
                assert_eq!(rel.is_relevant(), cands.len() >= 2);
            }
            assert!(doc.primary_code().is_some());
        }
        let check = self_check(&out.corpus, 4);
        assert!(check.passed(), "{check:?}");
    }

    #[test]
    fn separable_windows_carry_cues() {
        let out = generate(&small(TaskKind::Separable)).unwrap();
        let check = self_check(&out.corpus, 4);
        // The cue words are exactly what separates the classes here.
        assert!(!check.one_sided_tokens.is_empty());
    }

    #[test]
    fn config_errors() {
        let mut cfg = small(TaskKind::Separable);
        cfg.unseen_fraction = 1.0;
        assert!(generate(&cfg).is_err());
        cfg.unseen_fraction = 0.3;
        cfg.max_codes_per_doc = 19;
        assert!(generate(&cfg).is_err());
    }
}
