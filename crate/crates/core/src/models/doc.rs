//! Whole-document scorer with local attention, reading either the code
//! prefix positions or the entity positions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::encoder::{sparse_rows, EncoderCache};
use super::{Encoder, EncoderConfig, Inputs, Item, ModelError};
use crate::anchor::{assemble_document_tokenized, AnchorConfig, AnchorError, DocumentAssembly, TokenizedDocument};
use crate::corpus::Document;
use crate::nnkit::{AttentionMask, GradStore, Linear, ParamSet, ParamView, SeededRng, Tensor};
use crate::ontology::IcdCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorKind {
    Codes,
    Entities,
}

#[derive(Debug, Clone)]
pub struct DocModel {
    pub encoder: Encoder,
    head: Linear,
    anchor: AnchorConfig,
    pub local_radius: usize,
    pub kind: AnchorKind,
}

pub(crate) struct Cache {
    encoder: EncoderCache,
    rows: Tensor,
    positions: Vec<usize>,
    len: usize,
}

impl DocModel {
    pub fn new(
        ps: &mut ParamSet,
        config: EncoderConfig,
        anchor: AnchorConfig,
        local_radius: usize,
        kind: AnchorKind,
        rng: &mut SeededRng,
    ) -> Result<Self, ModelError> {
        let encoder = Encoder::new(ps, "encoder", config, true, rng)?;
        let head = Linear::new(ps, "head", config.width, 1, true, rng);
        Ok(DocModel {
            encoder,
            head,
            anchor,
            local_radius,
            kind,
        })
    }

    pub fn assemble(&self, doc: &Document, inputs: Inputs<'_>) -> Result<DocumentAssembly, ModelError> {
        let tokenized = TokenizedDocument::new(doc, inputs.vocab)?;
        Ok(assemble_document_tokenized(doc, &tokenized, inputs.table, inputs.vocab, &self.anchor)?)
    }

    pub fn mask(&self, assembly: &DocumentAssembly) -> AttentionMask {
        AttentionMask::Local {
            radius: self.local_radius,
            global: assembly.global_attention.clone(),
        }
    }

    fn items(&self, doc: &Document, assembly: &DocumentAssembly) -> Result<(Vec<Item>, Vec<usize>), ModelError> {
        match self.kind {
            AnchorKind::Codes => {
                let relevance = doc.code_relevance();
                Ok(assembly
                    .code_anchors
                    .iter()
                    .map(|(code, pos)| {
                        let item = Item {
                            code: code.clone(),
                            entity_id: None,
                            relevant: relevance[code].is_relevant(),
                        };
                        (item, *pos)
                    })
                    .unzip())
            }
            AnchorKind::Entities => {
                // An entity is relevant when any of its candidates is; its
                // representative code is the smallest one.
                let mut per_entity: BTreeMap<&str, (IcdCode, bool)> = BTreeMap::new();
                for c in &doc.candidates {
                    let rel = c.relevance().is_relevant();
                    per_entity
                        .entry(c.entity_id.as_str())
                        .and_modify(|(code, r)| {
                            if c.code < *code {
                                *code = c.code.clone();
                            }
                            *r |= rel;
                        })
                        .or_insert((c.code.clone(), rel));
                }
                let pairs: Vec<(Item, usize)> = assembly
                    .entity_anchors
                    .iter()
                    .filter_map(|(id, pos)| {
                        let (code, relevant) = per_entity.get(id.as_str())?;
                        Some((
                            Item {
                                code: code.clone(),
                                entity_id: Some(id.clone()),
                                relevant: *relevant,
                            },
                            *pos,
                        ))
                    })
                    .collect();
                if pairs.is_empty() {
                    return Err(ModelError::NoEntities(doc.id.clone()));
                }
                Ok(pairs.into_iter().unzip())
            }
        }
    }

    pub(crate) fn forward(
        &self,
        p: ParamView<'_>,
        doc: &Document,
        inputs: Inputs<'_>,
    ) -> Result<(Vec<Item>, Vec<f64>, Cache), ModelError> {
        let assembly = self.assemble(doc, inputs).map_err(|e| match e {
            ModelError::Anchor(AnchorError::NoCandidates(msg)) => ModelError::NoCandidates(msg),
            other => other,
        })?;
        let (items, positions) = self.items(doc, &assembly)?;
        let (h, encoder) = self.encoder.forward(p, &assembly.ids, &self.mask(&assembly))?;
        let w = self.encoder.width();
        let mut rows = Vec::with_capacity(positions.len() * w);
        for &pos in &positions {
            rows.extend_from_slice(h.row(pos));
        }
        let rows = Tensor::matrix(positions.len(), w, rows);
        let logits = self.head.forward(p, &rows)?.into_data();
        Ok((
            items,
            logits,
            Cache {
                encoder,
                rows,
                positions,
                len: assembly.ids.len(),
            },
        ))
    }

    pub(crate) fn backward(
        &self,
        p: ParamView<'_>,
        g: &mut GradStore,
        cache: &Cache,
        d_logits: &[f64],
    ) -> Result<(), ModelError> {
        let d = Tensor::matrix(d_logits.len(), 1, d_logits.to_vec());
        let d_rows = self.head.backward(p, g, &cache.rows, &d)?;
        let scattered: Vec<(usize, &[f64])> = cache
            .positions
            .iter()
            .enumerate()
            .map(|(i, &pos)| (pos, d_rows.row(i)))
            .collect();
        let d_out = sparse_rows(cache.len, self.encoder.width(), &scattered);
        self.encoder.backward(p, g, &cache.encoder, &d_out)?;
        Ok(())
    }
}
