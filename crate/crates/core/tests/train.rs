mod common;

use anchor_rank::anchor::AnchorConfig;
use anchor_rank::corpus::{Corpus, Split};
use anchor_rank::models::{CamlConfig, ModelKind};
use anchor_rank::train::{
    f1_at, grid_search, history_to_jsonl, select_threshold, threshold_candidates, train, EncoderSpec, Grid,
    TrainConfig, TrainError,
};
use common::Fixture;
use proptest::prelude::*;

fn small(kind: ModelKind, lambda: f64, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        lambda,
        epochs,
        seed,
        anchor: AnchorConfig { window: 4, max_len: 64, doc_max_len: 256 },
        encoder: EncoderSpec { width: 8, depth: 1, heads: 2, ffn_width: 12 },
        local_radius: 4,
        caml: CamlConfig { embed_dim: 6, kernel: 3, filters: 5 },
        ..TrainConfig::reference_default(kind, lambda > 0.0)
    }
}

fn checkpoint_bytes(outcome: &anchor_rank::train::TrainOutcome) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    outcome.ranker.save(&path).unwrap();
    std::fs::read(path).unwrap()
}

fn without_split(corpus: &Corpus, split: Split) -> Corpus {
    let docs = corpus.documents().iter().filter(|d| d.split != split).cloned().collect();
    Corpus::new(docs, "filtered").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn threshold_beats_every_candidate(items in prop::collection::vec(((0u8..=20).prop_map(|x| x as f64 / 20.0), any::<bool>()), 1..40)) {
        let t = select_threshold(&items);
        let best = threshold_candidates(&items).into_iter().map(|tau| f1_at(&items, tau)).fold(0.0, f64::max);
        prop_assert!((t.f1 - best).abs() < 1e-12);
        prop_assert!((f1_at(&items, t.tau) - t.f1).abs() < 1e-12);
        if !items.iter().any(|(_, y)| *y) {
            prop_assert_eq!(t.tau, 1.0);
            return Ok(());
        }
        // Smallest threshold among the optimal ones.
        for tau in threshold_candidates(&items) {
            if tau < t.tau {
                prop_assert!(f1_at(&items, tau) < t.f1 - 1e-12);
            }
        }
    }
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let fx = Fixture::load();
    for kind in ModelKind::ALL {
        let cfg = small(kind, 0.5, 2, 7);
        let a = train(&fx.corpus, &fx.table, &fx.vocab, &cfg).unwrap();
        let b = train(&fx.corpus, &fx.table, &fx.vocab, &cfg).unwrap();
        assert_eq!(checkpoint_bytes(&a), checkpoint_bytes(&b), "{kind}");
        assert_eq!(history_to_jsonl(&a.history), history_to_jsonl(&b.history));
    }
}

#[test]
fn ranking_weight_changes_the_trained_parameters() {
    let fx = Fixture::load();
    let plain = train(&fx.corpus, &fx.table, &fx.vocab, &small(ModelKind::Base, 0.0, 2, 1)).unwrap();
    let ranked = train(&fx.corpus, &fx.table, &fx.vocab, &small(ModelKind::Base, 0.5, 2, 1)).unwrap();
    assert_ne!(checkpoint_bytes(&plain), checkpoint_bytes(&ranked));
}

#[test]
fn test_documents_are_never_read() {
    let fx = Fixture::load();
    let test_ids: Vec<&str> = fx.corpus.split(Split::Test).map(|d| d.id.as_str()).collect();
    assert!(!test_ids.is_empty());
    for kind in ModelKind::ALL {
        let out = train(&fx.corpus, &fx.table, &fx.vocab, &small(kind, 0.0, 2, 3)).unwrap();
        assert!(out.access_log.iter().all(|id| !test_ids.contains(&id.as_str())), "{kind}");
        assert!(out.access_log.iter().any(|id| id == "val-1"));
    }
}

#[test]
fn history_has_one_record_per_epoch() {
    let fx = Fixture::load();
    let out = train(&fx.corpus, &fx.table, &fx.vocab, &small(ModelKind::Aggregation, 0.5, 3, 2)).unwrap();
    assert_eq!(out.history.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(out.history.iter().all(|r| r.train_loss.is_finite() && r.val_ndcg_at_12.is_some()));
    assert_eq!(history_to_jsonl(&out.history).lines().count(), 3);
    assert_eq!(Some(out.threshold.tau), out.history[2].val_threshold);
}

#[test]
fn shorter_run_is_a_prefix_of_a_longer_one() {
    let fx = Fixture::load();
    let long = train(&fx.corpus, &fx.table, &fx.vocab, &small(ModelKind::Base, 0.5, 3, 4)).unwrap();
    let short = train(&fx.corpus, &fx.table, &fx.vocab, &small(ModelKind::Base, 0.5, 2, 4)).unwrap();
    assert_eq!(short.history[..], long.history[..2]);
}

#[test]
fn empty_training_split_is_an_error() {
    let fx = Fixture::load();
    let corpus = without_split(&fx.corpus, Split::Train);
    let err = train(&corpus, &fx.table, &fx.vocab, &small(ModelKind::Base, 0.0, 1, 0)).unwrap_err();
    assert!(matches!(err, TrainError::EmptySplit(Split::Train)), "{err}");
}

#[test]
fn missing_validation_split_leaves_metrics_empty() {
    let fx = Fixture::load();
    let corpus = without_split(&fx.corpus, Split::Validation);
    let out = train(&corpus, &fx.table, &fx.vocab, &small(ModelKind::Base, 0.0, 1, 0)).unwrap();
    assert_eq!(out.history[0].val_ndcg_at_12, None);
    let grid = Grid { lrs: vec![1e-3], lambdas: vec![0.0], epochs: vec![1] };
    let err = grid_search(&corpus, &fx.table, &fx.vocab, &small(ModelKind::Base, 0.0, 1, 0), &grid).unwrap_err();
    assert!(matches!(err, TrainError::EmptySplit(Split::Validation)));
}

#[test]
fn grid_rules() {
    let fx = Fixture::load();
    let base = small(ModelKind::Base, 0.0, 1, 0);
    let empty = Grid { lrs: vec![], lambdas: vec![0.0], epochs: vec![1] };
    assert!(matches!(grid_search(&fx.corpus, &fx.table, &fx.vocab, &base, &empty), Err(TrainError::EmptyGrid)));

    let single = Grid { lrs: vec![2e-3], lambdas: vec![0.5], epochs: vec![2] };
    let r = grid_search(&fx.corpus, &fx.table, &fx.vocab, &base, &single).unwrap();
    assert_eq!(r.cells.len(), 1);
    assert_eq!((r.best.lr, r.best.lambda, r.best.epochs), (2e-3, 0.5, 2));

    let full = Grid { lrs: vec![1e-3, 1e-2], lambdas: vec![0.0, 0.5], epochs: vec![1, 2] };
    let r = grid_search(&fx.corpus, &fx.table, &fx.vocab, &base, &full).unwrap();
    assert_eq!(r.cells.len(), 8);
    let top = r.cells.iter().map(|c| c.criterion).fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<_> = r.cells.iter().filter(|c| c.criterion == top).collect();
    let min_lr = tied.iter().map(|c| c.config.lr).fold(f64::INFINITY, f64::min);
    assert_eq!(r.best.lr, min_lr);
    let min_lambda = tied.iter().filter(|c| c.config.lr == min_lr).map(|c| c.config.lambda).fold(f64::INFINITY, f64::min);
    assert_eq!(r.best.lambda, min_lambda);

    // Each cell's criterion equals a dedicated run of that length.
    for cell in &r.cells {
        let own = train(&fx.corpus, &fx.table, &fx.vocab, &cell.config).unwrap();
        assert_eq!(own.history.last().unwrap().val_ndcg_at_12.unwrap_or(f64::NEG_INFINITY), cell.criterion);
    }
}

#[test]
fn invalid_config_is_rejected_before_training() {
    let fx = Fixture::load();
    let mut cfg = small(ModelKind::Base, 0.0, 1, 0);
    cfg.lambda = 1.5;
    assert!(train(&fx.corpus, &fx.table, &fx.vocab, &cfg).is_err());
    cfg.lambda = 0.0;
    cfg.epochs = 0;
    assert!(matches!(train(&fx.corpus, &fx.table, &fx.vocab, &cfg), Err(TrainError::InvalidConfig(_))));
}
