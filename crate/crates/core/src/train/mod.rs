//! Training loop, threshold selection and grid search.
//!
//! One document is one optimization step. Epoch order is a seeded shuffle of
//! the training split, so a run is fully determined by (config, corpus).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::{AnchorConfig, Vocab};
use crate::corpus::{Corpus, Document, Split};
use crate::metrics::{flatten, mean_ndcg_at_12, prf_micro, DocScores, GainMap};
use crate::models::{
    CamlConfig, EncoderConfig, Inputs, LossConfig, ModelDescriptor, ModelError, ModelKind, Ranker,
};
use crate::nnkit::{AdamState, NnError, SeededRng};
use crate::ontology::{IcdCode, IcdTable};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("the {0} split has no usable documents")]
    EmptySplit(Split),
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("non-finite loss in epoch {epoch} at document {doc}")]
    NonFiniteLoss { epoch: usize, doc: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Widths of the transformer encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub ffn_width: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            width: 64,
            depth: 2,
            heads: 1,
            ffn_width: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub lr: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub anchor: AnchorConfig,
    pub encoder: EncoderSpec,
    pub local_radius: usize,
    pub code_item: bool,
    pub caml: CamlConfig,
}

impl TrainConfig {
    /// Learning rates and epoch counts of the reference runs; `with_ranking`
    /// turns on the ranking term at λ = 0.5.
    pub fn reference_default(kind: ModelKind, with_ranking: bool) -> Self {
        let (epochs, lr) = match (kind, with_ranking) {
            (ModelKind::Base, _) => (20, 1e-6),
            (ModelKind::DocEntities, false) => (5, 1e-5),
            (ModelKind::DocEntities, true) => (10, 1e-5),
            (ModelKind::DocCodes, _) => (10, 1e-5),
            (ModelKind::Aggregation, false) => (5, 1e-5),
            (ModelKind::Aggregation, true) => (5, 5e-5),
            (ModelKind::Caml, _) => (1553, 1e-4),
        };
        TrainConfig {
            kind,
            lr,
            lambda: if with_ranking { 0.5 } else { 0.0 },
            epochs,
            seed: 0,
            anchor: AnchorConfig::default(),
            encoder: EncoderSpec::default(),
            local_radius: 32,
            code_item: true,
            caml: CamlConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        LossConfig::new(self.lambda)?;
        Ok(())
    }

    pub fn descriptor(&self, vocab: &Vocab, labels: Vec<IcdCode>) -> ModelDescriptor {
        let mut d = ModelDescriptor::new(self.kind, vocab);
        d.encoder = EncoderConfig {
            vocab_size: vocab.len(),
            width: self.encoder.width,
            depth: self.encoder.depth,
            heads: self.encoder.heads,
            ffn_width: self.encoder.ffn_width,
        };
        d.caml = self.caml;
        d.loss = LossConfig {
            lambda: self.lambda,
        };
        d.anchor = self.anchor;
        d.local_radius = self.local_radius;
        d.code_item = self.code_item;
        d.labels = labels;
        d.init_seed = self.seed;
        d
    }
}

/// Decision threshold and the validation micro-F1 it achieves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau: f64,
    pub f1: f64,
}

/// Micro-F1 of `score ≥ tau` decisions.
pub fn f1_at(items: &[(f64, bool)], tau: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for &(s, y) in items {
        match (s >= tau, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    crate::metrics::Prf::from_counts(tp, fp, fn_).f1
}

/// Thresholds worth trying: 0, 1, and midpoints between adjacent distinct
/// finite scores, ascending.
pub fn threshold_candidates(items: &[(f64, bool)]) -> Vec<f64> {
    let mut scores: Vec<f64> = items.iter().map(|(s, _)| *s).filter(|s| s.is_finite()).collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let mut out = vec![0.0, 1.0];
    out.extend(scores.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Threshold maximizing micro-F1, smallest on ties. With no positives at all
/// every threshold scores 0 and the result is τ = 1, predicting nothing.
pub fn select_threshold(items: &[(f64, bool)]) -> Threshold {
    let positives = items.iter().filter(|(_, y)| *y).count();
    if positives == 0 {
        return Threshold { tau: 1.0, f1: 0.0 };
    }
    let mut sorted: Vec<(f64, bool)> = items.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // suffix_pos[i] = positives among sorted[i..]
    let mut suffix_pos = vec![0usize; sorted.len() + 1];
    for i in (0..sorted.len()).rev() {
        suffix_pos[i] = suffix_pos[i + 1] + usize::from(sorted[i].1);
    }
    let mut best = Threshold { tau: 0.0, f1: -1.0 };
    for tau in threshold_candidates(items) {
        let first = sorted.partition_point(|(s, _)| *s < tau);
        let predicted = sorted.len() - first;
        let tp = suffix_pos[first];
        let f1 = crate::metrics::Prf::from_counts(tp, predicted - tp, positives - tp).f1;
        if f1 > best.f1 {
            best = Threshold { tau, f1 };
        }
    }
    best
}

/// Per-epoch record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ndcg_at_12: Option<f64>,
    pub val_micro_f1: Option<f64>,
    pub val_threshold: Option<f64>,
}

pub fn history_to_jsonl(history: &[EpochRecord]) -> String {
    history
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub ranker: Ranker,
    pub history: Vec<EpochRecord>,
    pub threshold: Threshold,
    /// Ids of every document read during training, in order.
    pub access_log: Vec<String>,
    /// Training documents skipped because they had nothing to score.
    pub skipped: usize,
}

/// Code-level scores of each document; documents a model cannot score get an
/// empty prediction set.
pub fn score_documents(
    ranker: &Ranker,
    docs: &[&Document],
    inputs: Inputs<'_>,
) -> Result<Vec<DocScores>, ModelError> {
    docs.iter()
        .map(|doc| {
            let preds = match ranker.predict(doc, inputs) {
                Ok(p) => p,
                Err(ModelError::NoCandidates(_) | ModelError::NoEntities(_)) => Vec::new(),
                Err(e) => return Err(e),
            };
            Ok(DocScores::new(doc, &preds))
        })
        .collect()
}

/// Validation NDCG@12, and micro-F1 at the best threshold.
pub fn validation_summary(scores: &[DocScores]) -> (Option<f64>, Threshold) {
    let (ndcg, _) = mean_ndcg_at_12(scores, &GainMap::default());
    let threshold = select_threshold(&flatten(scores));
    debug_assert!((prf_micro(scores, threshold.tau).f1 - threshold.f1.max(0.0)).abs() < 1e-12);
    (ndcg, threshold)
}

/// Sorted gold codes of the training split.
pub fn train_labels(corpus: &Corpus) -> Vec<IcdCode> {
    corpus.gold_code_frequencies(Split::Train).into_keys().collect()
}

pub fn train(
    corpus: &Corpus,
    table: &IcdTable,
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let inputs = Inputs { table, vocab };
    let train_docs: Vec<&Document> = corpus
        .split(Split::Train)
        .filter(|d| !d.candidates.is_empty())
        .collect();
    if train_docs.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    let val_docs: Vec<&Document> = corpus.split(Split::Validation).collect();
    let labels = if config.kind == ModelKind::Caml {
        train_labels(corpus)
    } else {
        Vec::new()
    };
    let mut ranker = Ranker::new(config.descriptor(vocab, labels))?;
    let mut adam = AdamState::new(ranker.params(), config.lr);
    let mut order_rng = SeededRng::stream(config.seed, 1);
    let mut history = Vec::with_capacity(config.epochs);
    let mut access_log = Vec::new();
    let mut skipped = 0;
    let mut threshold = Threshold { tau: 0.5, f1: 0.0 };

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_docs.len()).collect();
        order_rng.shuffle(&mut order);
        let (mut total, mut steps) = (0.0, 0usize);
        for idx in order {
            let doc = train_docs[idx];
            access_log.push(doc.id.clone());
            match ranker.accumulate_gradients(doc, inputs) {
                Ok(loss) => {
                    adam.step(ranker.params_mut());
                    total += loss;
                    steps += 1;
                }
                Err(ModelError::NoCandidates(_) | ModelError::NoEntities(_)) => {
                    ranker.params_mut().zero_grads();
                    if epoch == 1 {
                        skipped += 1;
                    }
                }
                Err(ModelError::Nn(NnError::NonFiniteLoss { .. })) => {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        doc: doc.id.clone(),
                    })
                }
                Err(e) => return Err(e.into()),
            }
        }
        let mut record = EpochRecord {
            epoch,
            train_loss: if steps == 0 { 0.0 } else { total / steps as f64 },
            val_ndcg_at_12: None,
            val_micro_f1: None,
            val_threshold: None,
        };
        if !val_docs.is_empty() {
            access_log.extend(val_docs.iter().map(|d| d.id.clone()));
            let scores = score_documents(&ranker, &val_docs, inputs)?;
            let (ndcg, t) = validation_summary(&scores);
            record.val_ndcg_at_12 = ndcg;
            record.val_micro_f1 = Some(t.f1);
            record.val_threshold = Some(t.tau);
            threshold = t;
        }
        history.push(record);
    }
    Ok(TrainOutcome {
        ranker,
        history,
        threshold,
        access_log,
        skipped,
    })
}

/// Values to cross in a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lrs: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub epochs: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GridCell {
    pub config: TrainConfig,
    /// Validation NDCG@12 (micro-F1 for CAML); `-∞` when undefined.
    pub criterion: f64,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: TrainConfig,
    pub cells: Vec<GridCell>,
}

/// Scores every combination and keeps the best validation criterion.
/// Ties go to the smaller lr, then the smaller λ, then fewer epochs.
///
/// Epoch counts share one run per (lr, λ): training is deterministic and an
/// `e`-epoch run is exactly the first `e` epochs of a longer one, so each
/// count is read off the per-epoch validation history.
pub fn grid_search(
    corpus: &Corpus,
    table: &IcdTable,
    vocab: &Vocab,
    base: &TrainConfig,
    grid: &Grid,
) -> Result<GridResult, TrainError> {
    if grid.lrs.is_empty() || grid.lambdas.is_empty() || grid.epochs.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    if corpus.split(Split::Validation).next().is_none() {
        return Err(TrainError::EmptySplit(Split::Validation));
    }
    if grid.epochs.contains(&0) {
        return Err(TrainError::InvalidConfig("grid epochs must be at least 1".into()));
    }
    let longest = *grid.epochs.iter().max().expect("non-empty");
    let mut cells = Vec::new();
    for &lr in &grid.lrs {
        for &lambda in &grid.lambdas {
            let config = TrainConfig {
                lr,
                lambda,
                epochs: longest,
                ..base.clone()
            };
            let outcome = train(corpus, table, vocab, &config)?;
            for &epochs in &grid.epochs {
                let record = &outcome.history[epochs - 1];
                let criterion = if config.kind == ModelKind::Caml {
                    record.val_micro_f1
                } else {
                    record.val_ndcg_at_12
                }
                .unwrap_or(f64::NEG_INFINITY);
                cells.push(GridCell {
                    config: TrainConfig {
                        epochs,
                        ..config.clone()
                    },
                    criterion,
                });
            }
        }
    }
    let best = cells
        .iter()
        .min_by(|a, b| {
            b.criterion
                .total_cmp(&a.criterion)
                .then_with(|| a.config.lr.total_cmp(&b.config.lr))
                .then_with(|| a.config.lambda.total_cmp(&b.config.lambda))
                .then_with(|| a.config.epochs.cmp(&b.config.epochs))
        })
        .expect("grid is non-empty")
        .config
        .clone();
    Ok(GridResult { best, cells })
}

/// Gold-code frequencies of the training split, for prevalence buckets.
pub fn train_code_frequencies(corpus: &Corpus) -> BTreeMap<IcdCode, usize> {
    corpus.gold_code_frequencies(Split::Train)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_examples() {
        let t = select_threshold(&[(0.9, true), (0.1, false)]);
        assert_eq!(t.tau, 0.5);
        assert_eq!(t.f1, 1.0);
        let none = select_threshold(&[(0.9, false), (0.1, false)]);
        assert_eq!(none, Threshold { tau: 1.0, f1: 0.0 });
    }

    #[test]
    fn threshold_ignores_unscored() {
        let t = select_threshold(&[(f64::NEG_INFINITY, true), (0.7, true), (0.2, false)]);
        assert!((t.f1 - f1_at(&[(f64::NEG_INFINITY, true), (0.7, true), (0.2, false)], t.tau)).abs() < 1e-15);
        assert!((t.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn defaults_follow_reference_runs() {
        let agg = TrainConfig::reference_default(ModelKind::Aggregation, false);
        assert_eq!((agg.epochs, agg.lr, agg.lambda), (5, 1e-5, 0.0));
        let agg_rank = TrainConfig::reference_default(ModelKind::Aggregation, true);
        assert_eq!((agg_rank.epochs, agg_rank.lr, agg_rank.lambda), (5, 5e-5, 0.5));
        let base = TrainConfig::reference_default(ModelKind::Base, false);
        assert_eq!((base.epochs, base.lr), (20, 1e-6));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::reference_default(ModelKind::Base, false);
        c.epochs = 0;
        assert!(c.validate().is_err());
        c.epochs = 1;
        c.lr = 0.0;
        assert!(c.validate().is_err());
    }
}
