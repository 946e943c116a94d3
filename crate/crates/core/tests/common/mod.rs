#![allow(dead_code)]

use anchor_rank::anchor::{build_vocab, AnchorConfig, Vocab};
use anchor_rank::corpus::{Corpus, Document};
use anchor_rank::models::{EncoderConfig, ModelDescriptor, ModelKind, CamlConfig};
use anchor_rank::ontology::IcdTable;

pub struct Fixture {
    pub corpus: Corpus,
    pub table: IcdTable,
    pub vocab: Vocab,
}

impl Fixture {
    pub fn load() -> Self {
        let corpus = Corpus::from_jsonl(include_str!("../../fixtures/worked_example.jsonl"), "fixture").unwrap();
        let table = IcdTable::from_tsv(include_str!("../../fixtures/codes.tsv")).unwrap();
        let vocab = build_vocab(&corpus, &table, 1);
        Fixture { corpus, table, vocab }
    }

    pub fn doc(&self, id: &str) -> &Document {
        self.corpus.document(id).unwrap()
    }

    /// A deliberately tiny configuration so finite differences stay cheap.
    pub fn toy(&self, kind: ModelKind, lambda: f64, seed: u64) -> ModelDescriptor {
        let mut d = ModelDescriptor::new(kind, &self.vocab);
        d.encoder = EncoderConfig {
            vocab_size: self.vocab.len(),
            width: 4,
            depth: 1,
            heads: 1,
            ffn_width: 6,
        };
        d.caml = CamlConfig { embed_dim: 4, kernel: 3, filters: 3 };
        d.loss.lambda = lambda;
        d.anchor = AnchorConfig { window: 4, max_len: 64, doc_max_len: 256 };
        d.local_radius = 3;
        d.init_seed = seed;
        if kind == ModelKind::Caml {
            d.labels = self.corpus.gold_code_frequencies(anchor_rank::corpus::Split::Train).into_keys().collect();
        }
        d
    }
}
