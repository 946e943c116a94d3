//! Candidate-level scorer: one encoder pass per (code, entity) candidate,
//! scored from the `[CLS]` position.

use super::encoder::{sparse_rows, EncoderCache};
use super::{Encoder, EncoderConfig, Inputs, Item, ModelError, Prediction};
use crate::anchor::{anchor_tokenized, assemble_base_input, AnchorConfig, AnchoredContext, TokenizedDocument};
use crate::corpus::Document;
use crate::nnkit::{
    sigmoid, AttentionMask, GradStore, Linear, ParamSet, ParamView, SeededRng, Tensor,
};

#[derive(Debug, Clone)]
pub struct BaseModel {
    pub encoder: Encoder,
    head: Linear,
    anchor: AnchorConfig,
}

pub(crate) struct Cache {
    passes: Vec<(EncoderCache, Tensor, usize)>,
}

impl BaseModel {
    pub fn new(
        ps: &mut ParamSet,
        config: EncoderConfig,
        anchor: AnchorConfig,
        rng: &mut SeededRng,
    ) -> Result<Self, ModelError> {
        let encoder = Encoder::new(ps, "encoder", config, true, rng)?;
        let head = Linear::new(ps, "head", config.width, 1, true, rng);
        Ok(BaseModel {
            encoder,
            head,
            anchor,
        })
    }

    /// `[CLS]` vector of a candidate-level sequence, with its forward cache.
    pub(crate) fn encode_cls(
        encoder: &Encoder,
        p: ParamView<'_>,
        ids: &[usize],
    ) -> Result<(Tensor, EncoderCache, usize), ModelError> {
        let (h, cache) = encoder.forward(p, ids, &AttentionMask::Full)?;
        let cls = Tensor::matrix(1, encoder.width(), h.row(0).to_vec());
        Ok((cls, cache, ids.len()))
    }

    fn logit(&self, p: ParamView<'_>, ctx: &AnchoredContext) -> Result<(f64, Tensor, EncoderCache, usize), ModelError> {
        let ids = assemble_base_input(ctx, &self.anchor)?;
        let (cls, cache, n) = Self::encode_cls(&self.encoder, p, &ids)?;
        let logit = self.head.forward(p, &cls)?.data()[0];
        Ok((logit, cls, cache, n))
    }

    /// Scores a single anchored candidate.
    pub fn score(&self, p: ParamView<'_>, ctx: &AnchoredContext) -> Result<Prediction, ModelError> {
        let (logit, ..) = self.logit(p, ctx)?;
        Ok(Prediction {
            code: ctx.code.clone(),
            entity_id: Some(ctx.entity_id.clone()),
            score: sigmoid(logit),
        })
    }

    pub(crate) fn forward(
        &self,
        p: ParamView<'_>,
        doc: &Document,
        inputs: Inputs<'_>,
    ) -> Result<(Vec<Item>, Vec<f64>, Cache), ModelError> {
        let tokenized = TokenizedDocument::new(doc, inputs.vocab)?;
        let mut items = Vec::with_capacity(doc.candidates.len());
        let mut logits = Vec::with_capacity(doc.candidates.len());
        let mut passes = Vec::with_capacity(doc.candidates.len());
        for (i, cand) in doc.candidates.iter().enumerate() {
            let ctx = anchor_tokenized(doc, &tokenized, i, inputs.table, inputs.vocab, &self.anchor)?;
            let (logit, cls, cache, n) = self.logit(p, &ctx)?;
            items.push(Item {
                code: cand.code.clone(),
                entity_id: Some(cand.entity_id.clone()),
                relevant: cand.relevance().is_relevant(),
            });
            logits.push(logit);
            passes.push((cache, cls, n));
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
        for ((enc_cache, cls, n), &d) in cache.passes.iter().zip(d_logits) {
            if d == 0.0 {
                continue;
            }
            let d_cls = self.head.backward(p, g, cls, &Tensor::matrix(1, 1, vec![d]))?;
            let d_out = sparse_rows(*n, self.encoder.width(), &[(0, d_cls.data())]);
            self.encoder.backward(p, g, enc_cache, &d_out)?;
        }
        Ok(())
    }
}
