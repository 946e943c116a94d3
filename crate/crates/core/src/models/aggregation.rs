//! Three-stage scorer: encode each piece of evidence for a code, let the
//! `[CLS]` vectors attend to one another without positions, mean-pool, score.
//!
//! With `code_item` set, the encoded code description joins the evidence set
//! as one more item. Mean pooling alone cannot tell one mention from three
//! identical ones; the extra item gives attention something to weigh the
//! evidence against.

use super::base::BaseModel;
use super::encoder::{sparse_rows, EncoderCache};
use super::{Encoder, EncoderConfig, Inputs, Item, ModelError};
use crate::anchor::{
    anchor_tokenized, assemble_base_input, assemble_code_input, description_ids, AnchorConfig,
    TokenizedDocument,
};
use crate::corpus::Document;
use crate::nnkit::{
    mean_pool_backward, mean_pool_forward, AttentionCache, AttentionMask, GradStore, Linear,
    ParamSet, ParamView, SeededRng, SelfAttention, Tensor,
};
use crate::ontology::IcdCode;

#[derive(Debug, Clone)]
pub struct AggregationModel {
    pub encoder: Encoder,
    evidence_attention: SelfAttention,
    head: Linear,
    anchor: AnchorConfig,
    pub code_item: bool,
}

struct CodePass {
    encodings: Vec<(EncoderCache, usize)>,
    stacked: Tensor,
    attention: AttentionCache,
    pooled: Tensor,
}

pub(crate) struct Cache {
    passes: Vec<CodePass>,
}

/// Evidence input sequences for one code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeEvidence {
    pub code: IcdCode,
    pub relevant: bool,
    /// Candidate-level sequences, one per linked entity, in candidate order.
    pub evidence: Vec<Vec<usize>>,
    /// `[CLS] desc [SEP]`, present when the model uses a code item.
    pub code_input: Option<Vec<usize>>,
}

impl AggregationModel {
    pub fn new(
        ps: &mut ParamSet,
        config: EncoderConfig,
        anchor: AnchorConfig,
        code_item: bool,
        rng: &mut SeededRng,
    ) -> Result<Self, ModelError> {
        let encoder = Encoder::new(ps, "encoder", config, true, rng)?;
        let evidence_attention =
            SelfAttention::new(ps, "evidence_attention", config.width, config.heads, rng)?;
        let head = Linear::new(ps, "head", config.width, 1, true, rng);
        Ok(AggregationModel {
            encoder,
            evidence_attention,
            head,
            anchor,
            code_item,
        })
    }

    /// Groups a document's candidates by code and builds their inputs.
    pub fn evidence(&self, doc: &Document, inputs: Inputs<'_>) -> Result<Vec<CodeEvidence>, ModelError> {
        let tokenized = TokenizedDocument::new(doc, inputs.vocab)?;
        let relevance = doc.code_relevance();
        let mut out = Vec::new();
        for (code, _) in doc.group_by_code() {
            let mut evidence = Vec::new();
            for (i, c) in doc.candidates.iter().enumerate() {
                if c.code == code {
                    let ctx = anchor_tokenized(doc, &tokenized, i, inputs.table, inputs.vocab, &self.anchor)?;
                    evidence.push(assemble_base_input(&ctx, &self.anchor)?);
                }
            }
            let code_input = if self.code_item {
                let desc = description_ids(&code, inputs.table, inputs.vocab)?;
                Some(assemble_code_input(&desc, &self.anchor))
            } else {
                None
            };
            out.push(CodeEvidence {
                relevant: relevance[&code].is_relevant(),
                code,
                evidence,
                code_input,
            });
        }
        Ok(out)
    }

    /// Logit for one code from its evidence sequences.
    pub fn code_logit(&self, p: ParamView<'_>, ev: &CodeEvidence) -> Result<f64, ModelError> {
        Ok(self.pass(p, ev)?.0)
    }

    fn pass(&self, p: ParamView<'_>, ev: &CodeEvidence) -> Result<(f64, CodePass), ModelError> {
        let w = self.encoder.width();
        let sequences = ev.code_input.iter().chain(&ev.evidence);
        let mut encodings = Vec::new();
        let mut rows = Vec::new();
        for ids in sequences {
            let (cls, cache, n) = BaseModel::encode_cls(&self.encoder, p, ids)?;
            rows.extend_from_slice(cls.data());
            encodings.push((cache, n));
        }
        if encodings.is_empty() {
            return Err(ModelError::NoCandidates(format!("code {} has no evidence", ev.code)));
        }
        let stacked = Tensor::matrix(encodings.len(), w, rows);
        let (attended, attention) = self.evidence_attention.forward(p, &stacked, &AttentionMask::Full)?;
        let mixed = stacked.add(&attended)?;
        let pooled = mean_pool_forward(&mixed)?;
        let logit = self.head.forward(p, &pooled)?.data()[0];
        Ok((
            logit,
            CodePass {
                encodings,
                stacked,
                attention,
                pooled,
            },
        ))
    }

    pub(crate) fn forward(
        &self,
        p: ParamView<'_>,
        doc: &Document,
        inputs: Inputs<'_>,
    ) -> Result<(Vec<Item>, Vec<f64>, Cache), ModelError> {
        let groups = self.evidence(doc, inputs)?;
        if groups.is_empty() {
            return Err(ModelError::NoCandidates(format!("document {} has no candidates", doc.id)));
        }
        let mut items = Vec::with_capacity(groups.len());
        let mut logits = Vec::with_capacity(groups.len());
        let mut passes = Vec::with_capacity(groups.len());
        for ev in groups {
            let (logit, pass) = self.pass(p, &ev)?;
            items.push(Item {
                code: ev.code,
                entity_id: None,
                relevant: ev.relevant,
            });
            logits.push(logit);
            passes.push(pass);
        }
        Ok((items, logits, Cache { passes }))
    }

    pub(crate) fn backward(
        &self,
        p: ParamView<'_>,
        g: &mut GradStore,
        cache: &Cache,
        d_logits: &[f64],
    ) -> Result<(), ModelError> {
        let w = self.encoder.width();
        for (pass, &d) in cache.passes.iter().zip(d_logits) {
            if d == 0.0 {
                continue;
            }
            let d_pooled = self.head.backward(p, g, &pass.pooled, &Tensor::matrix(1, 1, vec![d]))?;
            let d_mixed = mean_pool_backward(pass.stacked.rows(), &d_pooled);
            let mut d_stacked = d_mixed.clone();
            d_stacked.add_assign(&self.evidence_attention.backward(p, g, &pass.attention, &d_mixed)?)?;
            for (r, (enc_cache, n)) in pass.encodings.iter().enumerate() {
                let d_out = sparse_rows(*n, w, &[(0, d_stacked.row(r))]);
                self.encoder.backward(p, g, enc_cache, &d_out)?;
            }
        }
        Ok(())
    }
}
