//! Ranking and classification metrics over code-level document scores.
//!
//! Every metric starts from a [`DocScores`]: one score per unique candidate
//! code. A candidate the model did not score carries `-∞`, which ranks it last
//! and keeps it below every threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Relevance};
use crate::models::Prediction;
use crate::ontology::IcdCode;

pub const NDCG_CUTOFF: usize = 12;
pub const COMMON_CODES: usize = 50;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("ROC AUC needs both positive and negative labels ({positives} positive, {negatives} negative)")]
    DegenerateLabels { positives: usize, negatives: usize },
    #[error("cutoff must be at least 1")]
    InvalidCutoff,
}

/// Graded gains per relevance level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainMap {
    pub primary: f64,
    pub secondary: f64,
    pub irrelevant: f64,
}

impl Default for GainMap {
    fn default() -> Self {
        GainMap {
            primary: 7.0,
            secondary: 1.0,
            irrelevant: -1.0,
        }
    }
}

impl GainMap {
    pub fn gain(&self, rel: Relevance) -> f64 {
        match rel {
            Relevance::Primary => self.primary,
            Relevance::Secondary => self.secondary,
            Relevance::Irrelevant => self.irrelevant,
        }
    }
}

/// `Σ gain_i / log2(i + 1)` over the first `k` positions (1-based `i`).
pub fn dcg(gains: &[f64], k: usize) -> f64 {
    gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// Codes sorted by (score desc, code asc).
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub entries: Vec<(IcdCode, f64)>,
}

impl RankedList {
    pub fn new(scores: &BTreeMap<IcdCode, f64>) -> Self {
        let mut entries: Vec<(IcdCode, f64)> = scores.iter().map(|(c, s)| (c.clone(), *s)).collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        RankedList { entries }
    }

    pub fn top(&self, k: usize) -> &[(IcdCode, f64)] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn head(&self) -> Option<&IcdCode> {
        self.entries.first().map(|(c, _)| c)
    }
}

/// One document's code-level scores next to its gold relevance.
#[derive(Debug, Clone, PartialEq)]
pub struct DocScores {
    pub doc_id: String,
    pub scores: BTreeMap<IcdCode, f64>,
    pub relevance: BTreeMap<IcdCode, Relevance>,
}

impl DocScores {
    /// Reduces predictions to one score per candidate code (max over
    /// entities). Predictions for codes outside the candidates are ignored.
    pub fn new(doc: &Document, predictions: &[Prediction]) -> Self {
        let relevance = doc.code_relevance();
        let mut scores: BTreeMap<IcdCode, f64> =
            relevance.keys().map(|c| (c.clone(), f64::NEG_INFINITY)).collect();
        for p in predictions {
            if let Some(s) = scores.get_mut(&p.code) {
                *s = s.max(p.score);
            }
        }
        DocScores {
            doc_id: doc.id.clone(),
            scores,
            relevance,
        }
    }

    pub fn from_parts(
        doc_id: &str,
        scores: BTreeMap<IcdCode, f64>,
        relevance: BTreeMap<IcdCode, Relevance>,
    ) -> Self {
        DocScores {
            doc_id: doc_id.to_string(),
            scores,
            relevance,
        }
    }

    pub fn ranked(&self) -> RankedList {
        RankedList::new(&self.scores)
    }

    fn rel(&self, code: &IcdCode) -> Relevance {
        self.relevance.get(code).copied().unwrap_or(Relevance::Irrelevant)
    }

    /// Code-level binary decisions at `tau`.
    pub fn predicted(&self, tau: f64) -> BTreeSet<IcdCode> {
        self.scores
            .iter()
            .filter(|(_, s)| **s >= tau)
            .map(|(c, _)| c.clone())
            .collect()
    }

    pub fn gold(&self) -> BTreeSet<IcdCode> {
        self.relevance
            .iter()
            .filter(|(_, r)| r.is_relevant())
            .map(|(c, _)| c.clone())
            .collect()
    }
}

/// NDCG at `k`, or `None` when the ideal DCG is not positive.
pub fn ndcg_at_k(doc: &DocScores, gains: &GainMap, k: usize) -> Option<f64> {
    let model: Vec<f64> = doc.ranked().entries.iter().map(|(c, _)| gains.gain(doc.rel(c))).collect();
    let mut ideal = model.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal, k);
    if idcg <= 0.0 {
        return None;
    }
    Some(dcg(&model, k) / idcg)
}

pub fn ndcg_at_12(doc: &DocScores, gains: &GainMap) -> Option<f64> {
    ndcg_at_k(doc, gains, NDCG_CUTOFF)
}

/// Mean NDCG@12 over documents where it is defined, and the number skipped.
pub fn mean_ndcg_at_12(docs: &[DocScores], gains: &GainMap) -> (Option<f64>, usize) {
    let values: Vec<f64> = docs.iter().filter_map(|d| ndcg_at_12(d, gains)).collect();
    let skipped = docs.len() - values.len();
    if values.is_empty() {
        return (None, skipped);
    }
    (Some(values.iter().sum::<f64>() / values.len() as f64), skipped)
}

/// Fraction of documents whose top-ranked code is the primary code.
pub fn p_at_1(docs: &[DocScores]) -> f64 {
    if docs.is_empty() {
        return 0.0;
    }
    let hits = docs
        .iter()
        .filter(|d| d.ranked().head().is_some_and(|c| d.rel(c) == Relevance::Primary))
        .count();
    hits as f64 / docs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Zero wherever a denominator is zero.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        // Count form: equal ratios give bit-equal values, so ties stay ties.
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        Prf {
            precision,
            recall,
            f1,
        }
    }

    fn mean(items: &[Prf]) -> Prf {
        if items.is_empty() {
            return Prf::default();
        }
        let n = items.len() as f64;
        Prf {
            precision: items.iter().map(|p| p.precision).sum::<f64>() / n,
            recall: items.iter().map(|p| p.recall).sum::<f64>() / n,
            f1: items.iter().map(|p| p.f1).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn prf(&self) -> Prf {
        Prf::from_counts(self.tp, self.fp, self.fn_)
    }
}

fn doc_counts(doc: &DocScores, tau: f64) -> Counts {
    let predicted = doc.predicted(tau);
    let gold = doc.gold();
    Counts {
        tp: predicted.intersection(&gold).count(),
        fp: predicted.difference(&gold).count(),
        fn_: gold.difference(&predicted).count(),
    }
}

/// PRF over all (document, code) decisions pooled together.
pub fn prf_micro(docs: &[DocScores], tau: f64) -> Prf {
    let mut total = Counts::default();
    for d in docs {
        let c = doc_counts(d, tau);
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn_ += c.fn_;
    }
    total.prf()
}

/// Mean of per-document PRF.
pub fn prf_doc(docs: &[DocScores], tau: f64) -> Prf {
    let per: Vec<Prf> = docs.iter().map(|d| doc_counts(d, tau).prf()).collect();
    Prf::mean(&per)
}

/// Per-code PRF over every code that is gold or predicted somewhere.
pub fn per_code_prf(docs: &[DocScores], tau: f64) -> BTreeMap<IcdCode, Prf> {
    let mut counts: BTreeMap<IcdCode, Counts> = BTreeMap::new();
    for d in docs {
        let predicted = d.predicted(tau);
        let gold = d.gold();
        for code in predicted.union(&gold) {
            let c = counts.entry(code.clone()).or_default();
            match (predicted.contains(code), gold.contains(code)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    counts.into_iter().map(|(code, c)| (code, c.prf())).collect()
}

/// Mean of per-code PRF.
pub fn prf_code(docs: &[DocScores], tau: f64) -> Prf {
    let per: Vec<Prf> = per_code_prf(docs, tau).into_values().collect();
    Prf::mean(&per)
}

/// Micro ROC AUC through the Mann–Whitney statistic with midranks for ties.
pub fn roc_auc(items: &[(f64, bool)]) -> Result<f64, MetricsError> {
    let positives = items.iter().filter(|(_, y)| *y).count();
    let negatives = items.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::DegenerateLabels {
            positives,
            negatives,
        });
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].0.total_cmp(&items[b].0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && items[order[j + 1]].0 == items[order[i]].0 {
            j += 1;
        }
        // Positions i..=j share the average 1-based rank.
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if items[idx].1 {
                rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Flattens documents into (score, relevant) pairs.
pub fn flatten(docs: &[DocScores]) -> Vec<(f64, bool)> {
    docs.iter()
        .flat_map(|d| d.scores.iter().map(move |(c, s)| (*s, d.rel(c).is_relevant())))
        .collect()
}

pub fn roc_auc_micro(docs: &[DocScores]) -> Result<f64, MetricsError> {
    roc_auc(&flatten(docs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prevalence {
    Common,
    Rare,
    Unseen,
}

/// Mean per-code F1 inside each prevalence bucket; `None` for empty buckets.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Breakdown {
    pub common: Option<f64>,
    pub rare: Option<f64>,
    pub unseen: Option<f64>,
    pub common_codes: usize,
    pub rare_codes: usize,
    pub unseen_codes: usize,
}

/// The `COMMON_CODES` most frequent training codes, ties by code.
pub fn common_codes(train_freq: &BTreeMap<IcdCode, usize>) -> BTreeSet<IcdCode> {
    let mut ordered: Vec<(&IcdCode, usize)> = train_freq.iter().map(|(c, n)| (c, *n)).collect();
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ordered
        .into_iter()
        .take(COMMON_CODES)
        .map(|(c, _)| c.clone())
        .collect()
}

pub fn prevalence(code: &IcdCode, common: &BTreeSet<IcdCode>, train_freq: &BTreeMap<IcdCode, usize>) -> Prevalence {
    if common.contains(code) {
        Prevalence::Common
    } else if train_freq.contains_key(code) {
        Prevalence::Rare
    } else {
        Prevalence::Unseen
    }
}

pub fn prevalence_breakdown(
    per_code_f1: &BTreeMap<IcdCode, f64>,
    train_freq: &BTreeMap<IcdCode, usize>,
) -> Breakdown {
    let common = common_codes(train_freq);
    let mut buckets: BTreeMap<Prevalence, Vec<f64>> = BTreeMap::new();
    for (code, f1) in per_code_f1 {
        buckets
            .entry(prevalence(code, &common, train_freq))
            .or_default()
            .push(*f1);
    }
    let mean = |b: Prevalence| {
        buckets
            .get(&b)
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let count = |b: Prevalence| buckets.get(&b).map_or(0, Vec::len);
    Breakdown {
        common: mean(Prevalence::Common),
        rare: mean(Prevalence::Rare),
        unseen: mean(Prevalence::Unseen),
        common_codes: count(Prevalence::Common),
        rare_codes: count(Prevalence::Rare),
        unseen_codes: count(Prevalence::Unseen),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub threshold: f64,
    pub ndcg_at_12: Option<f64>,
    pub p_at_1: f64,
    pub micro: Prf,
    pub doc: Prf,
    pub code: Prf,
    pub roc_auc_micro: Option<f64>,
    pub breakdown: Breakdown,
    pub documents: usize,
    /// Documents left out of NDCG@12 because they have no relevant code.
    pub skipped_documents: usize,
}

pub fn evaluate(docs: &[DocScores], tau: f64, train_freq: &BTreeMap<IcdCode, usize>) -> MetricsReport {
    let gains = GainMap::default();
    let (ndcg, skipped) = mean_ndcg_at_12(docs, &gains);
    let per_code = per_code_prf(docs, tau);
    let f1s: BTreeMap<IcdCode, f64> = per_code.iter().map(|(c, p)| (c.clone(), p.f1)).collect();
    MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        threshold: tau,
        ndcg_at_12: ndcg,
        p_at_1: p_at_1(docs),
        micro: prf_micro(docs, tau),
        doc: prf_doc(docs, tau),
        code: Prf::mean(&per_code.into_values().collect::<Vec<_>>()),
        roc_auc_micro: roc_auc_micro(docs).ok(),
        breakdown: prevalence_breakdown(&f1s, train_freq),
        documents: docs.len(),
        skipped_documents: skipped,
    }
}

impl MetricsReport {
    /// Fixed-width table: ranking, micro/doc/code PRF, AUC, prevalence F1.
    pub fn to_text_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
        let pct = |x: f64| format!("{:.2}", 100.0 * x);
        let mut out = String::new();
        let header = [
            "NDCG@12", "P@1", "Micro-P", "Micro-R", "Micro-F1", "Doc-P", "Doc-R", "Doc-F1", "Code-P",
            "Code-R", "Code-F1", "ROC_AUC", "Common", "Rare", "Unseen",
        ];
        let row = [
            opt(self.ndcg_at_12),
            pct(self.p_at_1),
            pct(self.micro.precision),
            pct(self.micro.recall),
            pct(self.micro.f1),
            pct(self.doc.precision),
            pct(self.doc.recall),
            pct(self.doc.f1),
            pct(self.code.precision),
            pct(self.code.recall),
            pct(self.code.f1),
            opt(self.roc_auc_micro),
            opt(self.breakdown.common),
            opt(self.breakdown.rare),
            opt(self.breakdown.unseen),
        ];
        for h in header {
            let _ = write!(out, "{h:>9}");
        }
        out.push('\n');
        for v in row {
            let _ = write!(out, "{v:>9}");
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "documents: {}  skipped for NDCG: {}  threshold: {:.4}",
            self.documents, self.skipped_documents, self.threshold
        );
        out
    }
}
