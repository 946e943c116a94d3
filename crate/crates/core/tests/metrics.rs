use std::collections::BTreeMap;

use anchor_rank::corpus::Relevance;
use anchor_rank::metrics::{
    common_codes, dcg, ndcg_at_k, per_code_prf, prevalence, prevalence_breakdown, prf_code,
    prf_micro, roc_auc, DocScores, GainMap, Prevalence,
};
use anchor_rank::ontology::IcdCode;
use proptest::prelude::*;

fn code(i: usize) -> IcdCode {
    IcdCode::parse(&format!("A{:02}", i)).unwrap()
}

fn rel_of(k: u8) -> Relevance {
    match k {
        0 => Relevance::Primary,
        1 => Relevance::Secondary,
        _ => Relevance::Irrelevant,
    }
}

fn doc_from(items: &[(f64, u8)]) -> DocScores {
    let scores = items.iter().enumerate().map(|(i, (s, _))| (code(i), *s)).collect();
    let relevance = items.iter().enumerate().map(|(i, (_, r))| (code(i), rel_of(*r))).collect();
    DocScores::from_parts("d", scores, relevance)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_dcg(gains: &[f64], k: usize) -> f64 {
    let mut total = 0.0;
    for (i, g) in gains.iter().take(k).enumerate() {
        total += g / ((i + 2) as f64).log2();
    }
    total
}

fn brute_auc(items: &[(f64, bool)]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (sp, _) in items.iter().filter(|(_, y)| *y) {
        for (sn, _) in items.iter().filter(|(_, y)| !*y) {
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn score_strategy() -> impl Strategy<Value = f64> {
    // Coarse grid so ties actually happen.
    (0u8..=10).prop_map(|x| x as f64 / 10.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ndcg_matches_best_permutation(items in prop::collection::vec((score_strategy(), 0u8..3), 1..=7), k in 1usize..=12) {
        let gains = GainMap::default();
        let doc = doc_from(&items);
        let model_order: Vec<f64> = doc.ranked().top(usize::MAX).iter()
            .map(|(c, _)| gains.gain(doc.relevance[c])).collect();
        let all: Vec<f64> = items.iter().map(|(_, r)| gains.gain(rel_of(*r))).collect();
        let best = permutations(all.len()).into_iter()
            .map(|p| brute_dcg(&p.iter().map(|&i| all[i]).collect::<Vec<_>>(), k))
            .fold(f64::NEG_INFINITY, f64::max);
        match ndcg_at_k(&doc, &gains, k) {
            Some(v) => {
                prop_assert!(best > 0.0);
                prop_assert!((v - brute_dcg(&model_order, k) / best).abs() < 1e-12);
                prop_assert!(v <= 1.0 + 1e-12);
            }
            None => prop_assert!(best <= 0.0),
        }
    }

    #[test]
    fn swapping_a_better_item_up_never_lowers_dcg(gains in prop::collection::vec(-1.0f64..7.0, 2..10), i in 0usize..10, j in 0usize..10) {
        let n = gains.len();
        let (i, j) = (i % n, j % n);
        prop_assume!(i < j);
        let mut swapped = gains.clone();
        swapped.swap(i, j);
        let k = n;
        if gains[j] > gains[i] {
            prop_assert!(dcg(&swapped, k) >= dcg(&gains, k) - 1e-12);
        } else {
            prop_assert!(dcg(&swapped, k) <= dcg(&gains, k) + 1e-12);
        }
    }

    #[test]
    fn auc_matches_pair_counting(items in prop::collection::vec((score_strategy(), any::<bool>()), 2..200)) {
        let pos = items.iter().filter(|(_, y)| *y).count();
        prop_assume!(pos > 0 && pos < items.len());
        let fast = roc_auc(&items).unwrap();
        prop_assert!((fast - brute_auc(&items)).abs() < 1e-12);
    }

    #[test]
    fn zero_threshold_recalls_everything(docs in prop::collection::vec(prop::collection::vec((score_strategy(), 0u8..3), 1..6), 1..6)) {
        let docs: Vec<DocScores> = docs.iter().map(|d| doc_from(d)).collect();
        prop_assume!(docs.iter().any(|d| !d.gold().is_empty()));
        prop_assert_eq!(prf_micro(&docs, 0.0).recall, 1.0);
    }

    #[test]
    fn prevalence_buckets_partition_codes(freqs in prop::collection::btree_map(0usize..90, 1usize..20, 0..80), eval in prop::collection::btree_set(0usize..100, 1..40)) {
        let train: BTreeMap<IcdCode, usize> = freqs.iter().map(|(c, n)| (code(*c), *n)).collect();
        let per_code: BTreeMap<IcdCode, f64> = eval.iter().map(|c| (code(*c), 0.5)).collect();
        let common = common_codes(&train);
        prop_assert!(common.len() <= 50);
        let b = prevalence_breakdown(&per_code, &train);
        prop_assert_eq!(b.common_codes + b.rare_codes + b.unseen_codes, per_code.len());
        for c in per_code.keys() {
            let bucket = prevalence(c, &common, &train);
            prop_assert_eq!(bucket == Prevalence::Unseen, !train.contains_key(c));
        }
        // Every common code is at least as frequent as every rare one.
        let min_common = common.iter().map(|c| train[c]).min();
        let max_rare = train.iter().filter(|(c, _)| !common.contains(*c)).map(|(_, n)| *n).max();
        if let (Some(a), Some(b)) = (min_common, max_rare) {
            prop_assert!(a >= b);
        }
    }
}

#[test]
fn unscored_codes_are_never_predicted() {
    let doc = doc_from(&[(f64::NEG_INFINITY, 0), (0.2, 2)]);
    let per = per_code_prf(std::slice::from_ref(&doc), 0.0);
    assert_eq!(per[&code(0)].f1, 0.0);
    assert_eq!(prf_code(&[doc], 0.0).recall, 0.0);
}
