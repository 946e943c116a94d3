//! Convolutional encoder with per-label dot-product attention over a label
//! set fixed at construction.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Inputs, Item, ModelError};
use crate::anchor::{TokenizedDocument, PAD};
use crate::corpus::Document;
use crate::nnkit::{
    tanh_backward, tanh_forward, Embedding, GradStore, Linear, ParamId, ParamSet, ParamView,
    SeededRng, Tensor,
};
use crate::ontology::IcdCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CamlConfig {
    pub embed_dim: usize,
    pub kernel: usize,
    pub filters: usize,
}

impl Default for CamlConfig {
    fn default() -> Self {
        CamlConfig {
            embed_dim: 100,
            kernel: 10,
            filters: 50,
        }
    }
}

impl CamlConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.kernel == 0 || self.filters == 0 {
            return Err(ModelError::InvalidConfig(
                "CAML dimensions must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CamlModel {
    pub config: CamlConfig,
    labels: Vec<IcdCode>,
    embedding: Embedding,
    conv: Linear,
    /// `labels × filters` attention queries.
    label_queries: ParamId,
    /// `labels × filters` output weights.
    label_weights: ParamId,
    /// `1 × labels`.
    label_bias: ParamId,
}

pub(crate) struct Cache {
    ids: Vec<usize>,
    unfolded: Tensor,
    hidden: Tensor,
    /// `positions × labels`, each column a softmax over positions.
    attention: Tensor,
    /// `labels × filters`.
    pooled: Tensor,
}

/// Per-label attention weights and scores for inspection.
#[derive(Debug, Clone)]
pub struct CamlOutput {
    pub labels: Vec<IcdCode>,
    pub attention: Tensor,
    pub scores: Vec<f64>,
}

impl CamlModel {
    pub fn new(
        ps: &mut ParamSet,
        vocab_size: usize,
        config: CamlConfig,
        labels: Vec<IcdCode>,
        rng: &mut SeededRng,
    ) -> Result<Self, ModelError> {
        let labels: Vec<IcdCode> = labels.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        if labels.is_empty() {
            return Err(ModelError::EmptyLabelSet);
        }
        config.validate()?;
        let l = labels.len();
        let embedding = Embedding::new(ps, "caml.embedding", vocab_size, config.embed_dim, rng);
        let conv = Linear::new(ps, "caml.conv", config.kernel * config.embed_dim, config.filters, true, rng);
        let label_queries = ps.xavier("caml.label_queries", l, config.filters, rng);
        let label_weights = ps.xavier("caml.label_weights", l, config.filters, rng);
        let label_bias = ps.zeros("caml.label_bias", &[1, l]);
        Ok(CamlModel {
            config,
            labels,
            embedding,
            conv,
            label_queries,
            label_weights,
            label_bias,
        })
    }

    pub fn labels(&self) -> &[IcdCode] {
        &self.labels
    }

    pub fn label_index(&self, code: &IcdCode) -> Option<usize> {
        self.labels.binary_search(code).ok()
    }

    /// Token ids, right-padded to the kernel width when shorter.
    fn padded(&self, ids: &[usize]) -> Vec<usize> {
        let mut ids = ids.to_vec();
        if ids.len() < self.config.kernel {
            ids.resize(self.config.kernel, PAD);
        }
        ids
    }

    fn run(&self, p: ParamView<'_>, ids: &[usize]) -> Result<(Vec<f64>, Cache), ModelError> {
        let ids = self.padded(ids);
        let (k, e, f) = (self.config.kernel, self.config.embed_dim, self.config.filters);
        let emb = self.embedding.forward(p, &ids)?;
        let positions = ids.len() - k + 1;
        let mut unfolded = Vec::with_capacity(positions * k * e);
        for start in 0..positions {
            unfolded.extend_from_slice(&emb.data()[start * e..(start + k) * e]);
        }
        let unfolded = Tensor::matrix(positions, k * e, unfolded);
        let hidden = tanh_forward(&self.conv.forward(p, &unfolded)?);
        let queries = p.get(self.label_queries);
        let scores = hidden.matmul_t(queries)?;
        let l = self.labels.len();
        let mut attention = Tensor::zeros(&[positions, l]);
        for label in 0..l {
            let max = (0..positions).map(|n| scores.get(n, label)).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = (0..positions).map(|n| (scores.get(n, label) - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (n, x) in exps.into_iter().enumerate() {
                attention.row_mut(n)[label] = x / total;
            }
        }
        let pooled = attention.t_matmul(&hidden)?;
        let weights = p.get(self.label_weights);
        let bias = p.get(self.label_bias).data();
        let logits = (0..l)
            .map(|label| {
                pooled.row(label).iter().zip(weights.row(label)).map(|(a, b)| a * b).sum::<f64>()
                    + bias[label]
            })
            .collect();
        debug_assert_eq!(pooled.cols(), f);
        Ok((
            logits,
            Cache {
                ids,
                unfolded,
                hidden,
                attention,
                pooled,
            },
        ))
    }

    /// Scores and attention over all labels for raw token ids.
    pub fn forward_ids(&self, p: ParamView<'_>, ids: &[usize]) -> Result<CamlOutput, ModelError> {
        let (logits, cache) = self.run(p, ids)?;
        Ok(CamlOutput {
            labels: self.labels.clone(),
            attention: cache.attention,
            scores: logits.into_iter().map(crate::nnkit::sigmoid).collect(),
        })
    }

    /// Score of a label, or `None` for codes outside the label set.
    pub fn score_code(&self, p: ParamView<'_>, ids: &[usize], code: &IcdCode) -> Result<Option<f64>, ModelError> {
        let Some(idx) = self.label_index(code) else {
            return Ok(None);
        };
        Ok(Some(self.forward_ids(p, ids)?.scores[idx]))
    }

    pub(crate) fn forward(
        &self,
        p: ParamView<'_>,
        doc: &Document,
        inputs: Inputs<'_>,
    ) -> Result<(Vec<Item>, Vec<f64>, Cache), ModelError> {
        let tokenized = TokenizedDocument::new(doc, inputs.vocab)?;
        let (logits, cache) = self.run(p, &tokenized.ids)?;
        let gold = doc.gold_codes();
        let items = self
            .labels
            .iter()
            .map(|code| Item {
                code: code.clone(),
                entity_id: None,
                relevant: gold.contains(code),
            })
            .collect();
        Ok((items, logits, cache))
    }

    pub(crate) fn backward(
        &self,
        p: ParamView<'_>,
        g: &mut GradStore,
        cache: &Cache,
        d_logits: &[f64],
    ) -> Result<(), ModelError> {
        let l = self.labels.len();
        let f = self.config.filters;
        let weights = p.get(self.label_weights);
        let queries = p.get(self.label_queries);
        let mut d_weights = Tensor::zeros(&[l, f]);
        let mut d_pooled = Tensor::zeros(&[l, f]);
        for label in 0..l {
            let d = d_logits[label];
            for j in 0..f {
                d_weights.row_mut(label)[j] = d * cache.pooled.get(label, j);
                d_pooled.row_mut(label)[j] = d * weights.get(label, j);
            }
        }
        g.accumulate(self.label_weights, &d_weights)?;
        g.accumulate(self.label_bias, &Tensor::matrix(1, l, d_logits.to_vec()))?;

        // pooled = Aᵀ H
        let mut d_hidden = cache.attention.matmul(&d_pooled)?;
        let d_attention = cache.hidden.matmul_t(&d_pooled)?;
        let positions = cache.hidden.rows();
        let mut d_scores = Tensor::zeros(&[positions, l]);
        for label in 0..l {
            let weighted: f64 = (0..positions)
                .map(|n| cache.attention.get(n, label) * d_attention.get(n, label))
                .sum();
            for n in 0..positions {
                let a = cache.attention.get(n, label);
                d_scores.row_mut(n)[label] = a * (d_attention.get(n, label) - weighted);
            }
        }
        // scores = H Uᵀ
        g.accumulate(self.label_queries, &d_scores.t_matmul(&cache.hidden)?)?;
        d_hidden.add_assign(&d_scores.matmul(queries)?)?;

        let d_pre = tanh_backward(&cache.hidden, &d_hidden);
        let d_unfolded = self.conv.backward(p, g, &cache.unfolded, &d_pre)?;
        let (k, e) = (self.config.kernel, self.config.embed_dim);
        let mut d_emb = Tensor::zeros(&[cache.ids.len(), e]);
        for start in 0..positions {
            let row = d_unfolded.row(start);
            for offset in 0..k {
                for (a, b) in d_emb.row_mut(start + offset).iter_mut().zip(&row[offset * e..(offset + 1) * e]) {
                    *a += b;
                }
            }
        }
        self.embedding.backward(g, &cache.ids, &d_emb);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(labels: &[&str]) -> (ParamSet, CamlModel) {
        let mut ps = ParamSet::new();
        let mut rng = SeededRng::new(4);
        let cfg = CamlConfig {
            embed_dim: 6,
            kernel: 3,
            filters: 5,
        };
        let labels = labels.iter().map(|c| IcdCode::parse(c).unwrap()).collect();
        let m = CamlModel::new(&mut ps, 20, cfg, labels, &mut rng).unwrap();
        (ps, m)
    }

    #[test]
    fn attention_columns_are_distributions() {
        let (ps, m) = toy(&["R112", "I10", "E119"]);
        let out = m.forward_ids(ps.view(), &[7, 8, 9, 10, 11, 12]).unwrap();
        assert_eq!(out.scores.len(), 3);
        for label in 0..3 {
            let total: f64 = (0..out.attention.rows()).map(|n| out.attention.get(n, label)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!(out.scores.iter().all(|s| *s > 0.0 && *s < 1.0));
    }

    #[test]
    fn short_documents_are_padded() {
        let (ps, m) = toy(&["R112"]);
        let out = m.forward_ids(ps.view(), &[7]).unwrap();
        assert_eq!(out.attention.rows(), 1);
        let empty = m.forward_ids(ps.view(), &[]).unwrap();
        assert_eq!(empty.scores.len(), 1);
    }

    #[test]
    fn codes_outside_labels_have_no_score() {
        let (ps, m) = toy(&["R112"]);
        let unseen = IcdCode::parse("F983").unwrap();
        assert_eq!(m.score_code(ps.view(), &[7, 8, 9], &unseen).unwrap(), None);
        assert!(m.score_code(ps.view(), &[7, 8, 9], &IcdCode::parse("R112").unwrap()).unwrap().is_some());
    }

    #[test]
    fn empty_label_set_is_rejected() {
        let mut ps = ParamSet::new();
        let mut rng = SeededRng::new(0);
        assert!(matches!(
            CamlModel::new(&mut ps, 10, CamlConfig::default(), vec![], &mut rng),
            Err(ModelError::EmptyLabelSet)
        ));
    }
}
