use std::collections::BTreeSet;

use serde::Serialize;

use super::{Corpus, Split};
use crate::anchor::{split_sentences, tokenize};
use crate::ontology::IcdCode;

/// One value per corpus split.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PerSplit<T> {
    pub train: T,
    pub validation: T,
    pub test: T,
}

impl<T> PerSplit<T> {
    pub fn get(&self, split: Split) -> &T {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    fn from_fn(mut f: impl FnMut(Split) -> T) -> Self {
        PerSplit {
            train: f(Split::Train),
            validation: f(Split::Validation),
            test: f(Split::Test),
        }
    }
}

/// Table-1 style counts for one split. Standard deviations are population.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SplitStats {
    pub documents: usize,
    /// Sum over documents of the number of unique candidate codes.
    pub codes: usize,
    pub entities: usize,
    pub words_mean: f64,
    pub words_std: f64,
    pub sentences_mean: f64,
    pub sentences_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn split_stats(corpus: &Corpus) -> PerSplit<SplitStats> {
    PerSplit::from_fn(|split| {
        let docs: Vec<_> = corpus.split(split).collect();
        let words: Vec<f64> = docs.iter().map(|d| tokenize(&d.text).len() as f64).collect();
        let sentences: Vec<f64> = docs
            .iter()
            .map(|d| split_sentences(&d.text).len() as f64)
            .collect();
        let (words_mean, words_std) = mean_std(&words);
        let (sentences_mean, sentences_std) = mean_std(&sentences);
        SplitStats {
            documents: docs.len(),
            codes: docs.iter().map(|d| d.unique_codes().len()).sum(),
            entities: docs.iter().map(|d| d.entities.len()).sum(),
            words_mean,
            words_std,
            sentences_mean,
            sentences_std,
        }
    })
}

/// Table-2 style count of gold codes never seen as gold in training.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MismatchStats {
    pub unique_codes: usize,
    pub unseen: usize,
    /// `100 * unseen / unique_codes`, or 0 when the split has no gold codes.
    pub unseen_pct: f64,
}

impl MismatchStats {
    pub fn from_sets(codes: &BTreeSet<IcdCode>, train: &BTreeSet<IcdCode>) -> Self {
        let unseen = codes.difference(train).count();
        let unique_codes = codes.len();
        let unseen_pct = if unique_codes == 0 {
            0.0
        } else {
            100.0 * unseen as f64 / unique_codes as f64
        };
        MismatchStats {
            unique_codes,
            unseen,
            unseen_pct,
        }
    }
}

pub fn code_mismatch_stats(corpus: &Corpus) -> PerSplit<MismatchStats> {
    let gold = |split| -> BTreeSet<IcdCode> {
        corpus.split(split).flat_map(|d| d.gold_codes()).collect()
    };
    let train = gold(Split::Train);
    PerSplit::from_fn(|split| MismatchStats::from_sets(&gold(split), &train))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Candidate, Document, EntitySpan};

    fn doc(id: &str, split: Split, codes: &[(&str, Option<u8>)]) -> Document {
        let text = "x ".repeat(codes.len().max(1));
        let entities = (0..codes.len())
            .map(|i| EntitySpan::new(&format!("e{i}"), 2 * i, 2 * i + 1, &text).unwrap())
            .collect();
        let candidates = codes
            .iter()
            .enumerate()
            .map(|(i, (c, r))| Candidate {
                entity_id: format!("e{i}"),
                code: IcdCode::parse(c).unwrap(),
                gold_rank: *r,
            })
            .collect();
        Document {
            id: id.into(),
            split,
            text,
            entities,
            candidates,
        }
    }

    #[test]
    fn mismatch_from_set_arithmetic() {
        let corpus = Corpus::new(
            vec![
                doc("a", Split::Train, &[("A00", Some(1)), ("B01", Some(2)), ("C02", Some(3))]),
                doc("b", Split::Test, &[("B01", Some(1)), ("D03", Some(2)), ("E04", None)]),
            ],
            "t",
        )
        .unwrap();
        let m = code_mismatch_stats(&corpus);
        assert_eq!(m.test.unique_codes, 2);
        assert_eq!(m.test.unseen, 1);
        assert_eq!(m.test.unseen_pct, 50.0);
        assert_eq!(m.train.unseen, 0);
        assert_eq!(m.validation, MismatchStats::default());
    }

    #[test]
    fn table2_arithmetic() {
        let codes: BTreeSet<IcdCode> = (0..112)
            .map(|i| {
                let letter = if i < 100 { 'A' } else { 'B' };
                IcdCode::parse(&format!("{letter}{:02}", i % 100)).unwrap()
            })
            .collect();
        let train: BTreeSet<IcdCode> = codes.iter().skip(44).cloned().collect();
        let m = MismatchStats::from_sets(&codes, &train);
        assert_eq!((m.unique_codes, m.unseen), (112, 44));
        assert_eq!(format!("{:.1}", m.unseen_pct), "39.3");
    }

    #[test]
    fn empty_corpus_is_zero() {
        let corpus = Corpus::default();
        assert_eq!(split_stats(&corpus), PerSplit::default());
        assert_eq!(code_mismatch_stats(&corpus), PerSplit::default());
    }
}
