//! Ranking architectures, the CAML baseline, and their losses.
//!
//! Every architecture is wrapped by [`Ranker`], which owns the parameters and
//! an architecture descriptor, so one training loop and one checkpoint format
//! serve all of them.

mod aggregation;
mod base;
mod caml;
mod doc;
mod encoder;
mod loss;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::{AnchorConfig, AnchorError, Vocab};
use crate::corpus::Document;
use crate::nnkit::{
    restore_params, sigmoid, GradStore, NnError, Objective, ParamSet, ParamView, SeededRng,
    TensorArchive,
};
use crate::ontology::{IcdCode, IcdTable};

pub use aggregation::{AggregationModel, CodeEvidence};
pub use base::BaseModel;
pub use caml::{CamlConfig, CamlModel, CamlOutput};
pub use doc::{AnchorKind, DocModel};
pub use encoder::{Encoder, EncoderCache, EncoderConfig};
pub use loss::{bce_loss, interpolated_from_logits, ranking_loss, total_loss, LossConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Anchor(#[from] AnchorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("no candidates: {0}")]
    NoCandidates(String),
    #[error("no entity of document {0} survives truncation")]
    NoEntities(String),
    #[error("label set is empty")]
    EmptyLabelSet,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("vocabulary hash {found} does not match checkpoint hash {expected}")]
    ChecksumMismatch { expected: String, found: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One relevance score. `entity_id` is absent for code-level models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub code: IcdCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<String>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Base,
    DocCodes,
    DocEntities,
    Aggregation,
    Caml,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Base,
        ModelKind::DocCodes,
        ModelKind::DocEntities,
        ModelKind::Aggregation,
        ModelKind::Caml,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Base => "base",
            ModelKind::DocCodes => "doc-codes",
            ModelKind::DocEntities => "doc-entities",
            ModelKind::Aggregation => "aggregation",
            ModelKind::Caml => "caml",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                format!("unknown model `{s}` (expected base, doc-codes, doc-entities, aggregation or caml)")
            })
    }
}

/// Everything needed to rebuild an architecture before loading its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    pub caml: CamlConfig,
    pub loss: LossConfig,
    pub anchor: AnchorConfig,
    /// Local attention radius of the document-level models.
    pub local_radius: usize,
    /// Whether the aggregation model adds the code description as an extra
    /// attention item next to its evidence.
    pub code_item: bool,
    pub vocab_hash: String,
    pub vocab_size: usize,
    /// CAML's fixed label set; empty for the other kinds.
    pub labels: Vec<IcdCode>,
    pub init_seed: u64,
}

impl ModelDescriptor {
    pub fn new(kind: ModelKind, vocab: &Vocab) -> Self {
        ModelDescriptor {
            kind,
            encoder: EncoderConfig::new(vocab.len(), 64, 2),
            caml: CamlConfig::default(),
            loss: LossConfig { lambda: 0.0 },
            anchor: AnchorConfig::default(),
            local_radius: 32,
            code_item: true,
            vocab_hash: vocab.hash(),
            vocab_size: vocab.len(),
            labels: Vec::new(),
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        LossConfig::new(self.loss.lambda)?;
        self.anchor.validate()?;
        if self.encoder.vocab_size != self.vocab_size {
            return Err(ModelError::InvalidConfig(
                "encoder vocabulary size differs from the vocabulary".into(),
            ));
        }
        if self.encoder.width == 0 || self.encoder.heads == 0 || self.encoder.width % self.encoder.heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "width {} must be a positive multiple of {} heads",
                self.encoder.width, self.encoder.heads
            )));
        }
        if self.kind == ModelKind::Caml {
            if self.labels.is_empty() {
                return Err(ModelError::EmptyLabelSet);
            }
            self.caml.validate()?;
        }
        Ok(())
    }
}

/// Read-only resources shared by every forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Inputs<'a> {
    pub table: &'a IcdTable,
    pub vocab: &'a Vocab,
}

/// A scored unit inside one document's loss.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Item {
    pub code: IcdCode,
    pub entity_id: Option<String>,
    pub relevant: bool,
}

#[derive(Debug, Clone)]
enum Arch {
    Base(BaseModel),
    Doc(DocModel),
    Aggregation(AggregationModel),
    Caml(CamlModel),
}

enum ArchCache {
    Base(base::Cache),
    Doc(doc::Cache),
    Aggregation(aggregation::Cache),
    Caml(caml::Cache),
}

impl Arch {
    fn build(d: &ModelDescriptor, ps: &mut ParamSet) -> Result<Self, ModelError> {
        let mut rng = SeededRng::new(d.init_seed);
        Ok(match d.kind {
            ModelKind::Base => Arch::Base(BaseModel::new(ps, d.encoder, d.anchor, &mut rng)?),
            ModelKind::DocCodes | ModelKind::DocEntities => {
                let kind = if d.kind == ModelKind::DocCodes {
                    AnchorKind::Codes
                } else {
                    AnchorKind::Entities
                };
                Arch::Doc(DocModel::new(ps, d.encoder, d.anchor, d.local_radius, kind, &mut rng)?)
            }
            ModelKind::Aggregation => Arch::Aggregation(AggregationModel::new(
                ps,
                d.encoder,
                d.anchor,
                d.code_item,
                &mut rng,
            )?),
            ModelKind::Caml => Arch::Caml(CamlModel::new(
                ps,
                d.vocab_size,
                d.caml,
                d.labels.clone(),
                &mut rng,
            )?),
        })
    }

    fn forward(
        &self,
        p: ParamView<'_>,
        doc: &Document,
        inputs: Inputs<'_>,
    ) -> Result<(Vec<Item>, Vec<f64>, ArchCache), ModelError> {
        Ok(match self {
            Arch::Base(m) => {
                let (items, logits, c) = m.forward(p, doc, inputs)?;
                (items, logits, ArchCache::Base(c))
            }
            Arch::Doc(m) => {
                let (items, logits, c) = m.forward(p, doc, inputs)?;
                (items, logits, ArchCache::Doc(c))
            }
            Arch::Aggregation(m) => {
                let (items, logits, c) = m.forward(p, doc, inputs)?;
                (items, logits, ArchCache::Aggregation(c))
            }
            Arch::Caml(m) => {
                let (items, logits, c) = m.forward(p, doc, inputs)?;
                (items, logits, ArchCache::Caml(c))
            }
        })
    }

    fn backward(
        &self,
        p: ParamView<'_>,
        g: &mut GradStore,
        cache: &ArchCache,
        d_logits: &[f64],
    ) -> Result<(), ModelError> {
        match (self, cache) {
            (Arch::Base(m), ArchCache::Base(c)) => m.backward(p, g, c, d_logits),
            (Arch::Doc(m), ArchCache::Doc(c)) => m.backward(p, g, c, d_logits),
            (Arch::Aggregation(m), ArchCache::Aggregation(c)) => m.backward(p, g, c, d_logits),
            (Arch::Caml(m), ArchCache::Caml(c)) => m.backward(p, g, c, d_logits),
            _ => unreachable!("cache from a different architecture"),
        }
    }
}

/// A model instance: descriptor, architecture and parameters.
#[derive(Debug, Clone)]
pub struct Ranker {
    descriptor: ModelDescriptor,
    arch: Arch,
    params: ParamSet,
}

impl Ranker {
    pub fn new(descriptor: ModelDescriptor) -> Result<Self, ModelError> {
        descriptor.validate()?;
        let mut params = ParamSet::new();
        let arch = Arch::build(&descriptor, &mut params)?;
        Ok(Ranker {
            descriptor,
            arch,
            params,
        })
    }

    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    pub fn kind(&self) -> ModelKind {
        self.descriptor.kind
    }

    pub fn lambda(&self) -> f64 {
        self.descriptor.loss.lambda
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn base(&self) -> Option<&BaseModel> {
        match &self.arch {
            Arch::Base(m) => Some(m),
            _ => None,
        }
    }

    pub fn doc_model(&self) -> Option<&DocModel> {
        match &self.arch {
            Arch::Doc(m) => Some(m),
            _ => None,
        }
    }

    pub fn aggregation(&self) -> Option<&AggregationModel> {
        match &self.arch {
            Arch::Aggregation(m) => Some(m),
            _ => None,
        }
    }

    pub fn caml(&self) -> Option<&CamlModel> {
        match &self.arch {
            Arch::Caml(m) => Some(m),
            _ => None,
        }
    }

    pub fn check_vocab(&self, vocab: &Vocab) -> Result<(), ModelError> {
        let found = vocab.hash();
        if found != self.descriptor.vocab_hash {
            return Err(ModelError::ChecksumMismatch {
                expected: self.descriptor.vocab_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    /// Scores for one document.
    ///
    /// Entity-level models emit one prediction per candidate of each scored
    /// entity. CAML emits one per candidate code inside its label set.
    pub fn predict(&self, doc: &Document, inputs: Inputs<'_>) -> Result<Vec<Prediction>, ModelError> {
        if doc.candidates.is_empty() {
            return Ok(Vec::new());
        }
        let (items, logits, _) = self.arch.forward(self.params.view(), doc, inputs)?;
        let scored = items.into_iter().zip(logits.into_iter().map(sigmoid));
        Ok(match &self.arch {
            Arch::Doc(m) if m.kind == AnchorKind::Entities => scored
                .flat_map(|(item, score)| {
                    let entity = item.entity_id.expect("entity items carry ids");
                    doc.candidates
                        .iter()
                        .filter(|c| c.entity_id == entity)
                        .map(|c| Prediction {
                            code: c.code.clone(),
                            entity_id: Some(entity.clone()),
                            score,
                        })
                        .collect::<Vec<_>>()
                })
                .collect(),
            Arch::Caml(_) => {
                let wanted = doc.unique_codes();
                scored
                    .filter(|(item, _)| wanted.contains(&item.code))
                    .map(|(item, score)| Prediction {
                        code: item.code,
                        entity_id: None,
                        score,
                    })
                    .collect()
            }
            _ => scored
                .map(|(item, score)| Prediction {
                    code: item.code,
                    entity_id: item.entity_id,
                    score,
                })
                .collect(),
        })
    }

    /// Interpolated loss for one document under `params`.
    pub fn document_loss(
        &self,
        params: &ParamSet,
        doc: &Document,
        inputs: Inputs<'_>,
    ) -> Result<f64, ModelError> {
        let (items, logits, _) = self.arch.forward(params.view(), doc, inputs)?;
        let relevant: Vec<bool> = items.iter().map(|i| i.relevant).collect();
        Ok(interpolated_from_logits(&logits, &relevant, self.lambda()).0)
    }

    /// Loss for one document, accumulating `scale × ∂loss` into `params`' gradients.
    pub fn document_loss_and_grad(
        &self,
        params: &mut ParamSet,
        doc: &Document,
        inputs: Inputs<'_>,
        scale: f64,
    ) -> Result<f64, ModelError> {
        let (p, g) = params.split();
        let (items, logits, cache) = self.arch.forward(p, doc, inputs)?;
        let relevant: Vec<bool> = items.iter().map(|i| i.relevant).collect();
        let (loss, mut d_logits) = interpolated_from_logits(&logits, &relevant, self.lambda());
        if !loss.is_finite() {
            return Err(NnError::NonFiniteLoss {
                context: format!("document {}", doc.id),
            }
            .into());
        }
        d_logits.iter_mut().for_each(|d| *d *= scale);
        self.arch.backward(p, g, &cache, &d_logits)?;
        Ok(loss)
    }

    /// Accumulates gradients of one document's loss into the owned parameters.
    pub fn accumulate_gradients(&mut self, doc: &Document, inputs: Inputs<'_>) -> Result<f64, ModelError> {
        let mut params = std::mem::take(&mut self.params);
        let out = self.document_loss_and_grad(&mut params, doc, inputs, 1.0);
        self.params = params;
        out
    }

    /// Mean document loss as a gradient-checkable objective.
    pub fn objective<'a>(&'a self, docs: Vec<&'a Document>, inputs: Inputs<'a>) -> RankerObjective<'a> {
        RankerObjective {
            ranker: self,
            docs,
            inputs,
            break_gradient: false,
        }
    }

    pub fn to_archive(&self) -> TensorArchive<ModelDescriptor> {
        TensorArchive::new(self.descriptor.clone(), &self.params)
    }

    pub fn from_archive(archive: &TensorArchive<ModelDescriptor>) -> Result<Self, ModelError> {
        let mut ranker = Ranker::new(archive.descriptor.clone())?;
        restore_params(&mut ranker.params, &archive.tensors)?;
        Ok(ranker)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let json = self.to_archive().to_json()?;
        fs::write(path, json).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ranker::from_archive(&TensorArchive::from_json(&text)?)
    }
}

/// See [`Ranker::objective`].
pub struct RankerObjective<'a> {
    ranker: &'a Ranker,
    docs: Vec<&'a Document>,
    inputs: Inputs<'a>,
    break_gradient: bool,
}

impl RankerObjective<'_> {
    /// Corrupts the analytic gradient so a checker can be shown to fail.
    pub fn with_broken_gradient(mut self) -> Self {
        self.break_gradient = true;
        self
    }
}

impl Objective for RankerObjective<'_> {
    fn loss(&self, params: &ParamSet) -> Result<f64, NnError> {
        let mut total = 0.0;
        for doc in &self.docs {
            total += self
                .ranker
                .document_loss(params, doc, self.inputs)
                .map_err(into_nn)?;
        }
        Ok(total / self.docs.len().max(1) as f64)
    }

    fn loss_and_grad(&self, params: &mut ParamSet) -> Result<f64, NnError> {
        let scale = 1.0 / self.docs.len().max(1) as f64;
        let mut total = 0.0;
        for doc in &self.docs {
            total += self
                .ranker
                .document_loss_and_grad(params, doc, self.inputs, scale)
                .map_err(into_nn)?;
        }
        if self.break_gradient {
            if let Some(id) = params.ids().next() {
                params.grads_mut().get_mut(id).data_mut()[0] += 1.0;
            }
        }
        Ok(total * scale)
    }
}

fn into_nn(e: ModelError) -> NnError {
    match e {
        ModelError::Nn(inner) => inner,
        other => NnError::Objective(other.to_string()),
    }
}

/// Code-level scores: the maximum over each code's predictions.
pub fn code_scores(predictions: &[Prediction]) -> BTreeMap<IcdCode, f64> {
    let mut out: BTreeMap<IcdCode, f64> = BTreeMap::new();
    for p in predictions {
        out.entry(p.code.clone())
            .and_modify(|s| *s = s.max(p.score))
            .or_insert(p.score);
    }
    out
}

/// Predictions ordered by (score desc, code asc, entity id asc).
pub fn sort_predictions(predictions: &mut [Prediction]) {
    predictions.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.code.cmp(&b.code))
            .then_with(|| a.entity_id.cmp(&b.entity_id))
    });
}
