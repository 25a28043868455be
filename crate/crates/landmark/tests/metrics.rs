use landmark::metrics::{
    corpus_recall_at_k, mean_recall_at_k, rank_order, recall_at_k, topn_recall_at_k, topn_recall_at_k_record, Candidate,
    EvalRecord,
};
use landmark::rng::SeedStream;
use landmark::synth::Triplet;
use proptest::prelude::*;

mod support;
use support::oracles::*;

const K_VOCAB: usize = 6;

#[test]
fn recall_matches_rank_counting_oracle() {
    let mut rng = SeedStream::new(100);
    for i in 0..1500 {
        let r = random_record(&mut rng, i, K_VOCAB);
        let k = 1 + rng.below(25);
        let got = recall_at_k(&r, k);
        if r.gt.is_empty() {
            assert_eq!(got, None);
            continue;
        }
        let want = fraction(&oracle_hits(&r, &oracle_graph(&r, k)));
        assert!((got.unwrap() - want).abs() <= 1e-12, "record {i}");
    }
}

#[test]
fn topn_matches_enumeration_oracle() {
    let mut rng = SeedStream::new(101);
    for i in 0..1500 {
        let r = random_record(&mut rng, i, K_VOCAB);
        let (n, k) = (1 + rng.below(K_VOCAB), 1 + rng.below(20));
        let got = topn_recall_at_k_record(&r, n, k);
        if r.gt.is_empty() {
            assert_eq!(got, None);
            continue;
        }
        let want = fraction(&oracle_hits(&r, &oracle_topn(&r, n, k)));
        assert!((got.unwrap() - want).abs() <= 1e-12, "record {i}");
    }
}

#[test]
fn mean_recall_matches_per_class_loop() {
    let mut rng = SeedStream::new(102);
    for trial in 0..1000 {
        let records: Vec<EvalRecord> = (0..1 + rng.below(6) as u64).map(|i| random_record(&mut rng, i, K_VOCAB)).collect();
        let k = 1 + rng.below(20);
        let got = mean_recall_at_k(&records, k, K_VOCAB);
        let (per_class, want) = oracle_mean_recall(&records, k, K_VOCAB);
        for (p, w) in per_class.iter().enumerate() {
            match w {
                None => assert_eq!(got.per_class[p], None),
                Some(w) => assert!((got.per_class[p].unwrap() - w).abs() <= 1e-12),
            }
        }
        assert!((got.mean - want).abs() <= 1e-12, "trial {trial}");
    }
}

#[test]
fn five_triplet_fixture_matches_hand_count() {
    let t = |s, o, p| Triplet {
        subject: s,
        object: o,
        predicate: p,
    };
    let c = |s, o, p, score| Candidate {
        subject: s,
        object: o,
        predicate: p,
        score,
    };
    let r = EvalRecord {
        scene_id: 0,
        gt: vec![t(0, 1, 1), t(1, 2, 2), t(2, 0, 3), t(0, 2, 1), t(2, 1, 4)],
        entity_ok: vec![],
        candidates: vec![
            c(0, 1, 1, 0.9),
            c(0, 1, 2, 0.2),
            c(1, 2, 2, 0.3),
            c(1, 2, 3, 0.6),
            c(2, 0, 3, 0.8),
            c(0, 2, 1, 0.5),
            c(0, 2, 0, 0.95),
            c(2, 1, 4, 0.4),
            c(1, 0, 1, 0.7),
        ],
    };
    // pair tops: (0,1,1).9 (2,0,3).8 (1,0,1).7 (1,2,3).6 (0,2,1).5 (2,1,4).4
    assert_eq!(recall_at_k(&r, 1), Some(1.0 / 5.0));
    assert_eq!(recall_at_k(&r, 3), Some(2.0 / 5.0));
    assert_eq!(recall_at_k(&r, 5), Some(3.0 / 5.0));
    assert_eq!(recall_at_k(&r, 6), Some(4.0 / 5.0));
    // (1,2,2) is never a pair top; with two per pair it enters at rank 8
    assert_eq!(topn_recall_at_k_record(&r, 2, 4), Some(1.0));
    assert_eq!(topn_recall_at_k_record(&r, 2, 3), Some(4.0 / 5.0));
}

#[test]
fn single_class_mean_equals_recall() {
    let mut rng = SeedStream::new(7);
    let mut records: Vec<EvalRecord> = (0..20).map(|i| random_record(&mut rng, i, K_VOCAB)).collect();
    for r in &mut records {
        r.gt.iter_mut().for_each(|t| t.predicate = 2);
        r.gt.truncate(1);
    }
    let m = mean_recall_at_k(&records, 10, K_VOCAB);
    let with_gt: Vec<&EvalRecord> = records.iter().filter(|r| !r.gt.is_empty()).collect();
    let pooled = with_gt.iter().map(|r| recall_at_k(r, 10).unwrap()).sum::<f64>() / with_gt.len() as f64;
    assert!((m.mean - pooled).abs() < 1e-12);
    assert!((corpus_recall_at_k(&records, 10) - pooled).abs() < 1e-12);
}

#[test]
fn full_vocabulary_pool_admits_every_predicate() {
    let mut rng = SeedStream::new(9);
    for i in 0..300 {
        let r = random_record(&mut rng, i, K_VOCAB);
        if r.gt.is_empty() {
            continue;
        }
        let big = r.candidates.len().max(1);
        let hits = r
            .gt
            .iter()
            .filter(|t| label_ok(&r, t) && r.candidates.iter().any(|c| (c.subject, c.object, c.predicate) == (t.subject, t.object, t.predicate)))
            .count();
        let want = hits as f64 / r.gt.len() as f64;
        assert_eq!(topn_recall_at_k_record(&r, K_VOCAB, big), Some(want));
    }
}

#[test]
fn ranking_is_a_total_order() {
    let a = Candidate {
        subject: 0,
        object: 1,
        predicate: 2,
        score: 0.5,
    };
    let b = Candidate { predicate: 3, ..a };
    assert_eq!(rank_order(&a, &b), std::cmp::Ordering::Less);
    assert_eq!(rank_order(&a, &a), std::cmp::Ordering::Equal);
    let c = Candidate { score: 0.6, ..b };
    assert_eq!(rank_order(&c, &a), std::cmp::Ordering::Less);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn top_one_equals_recall(seed in any::<u64>(), k in 1usize..40) {
        let mut rng = SeedStream::new(seed);
        let records: Vec<EvalRecord> = (0..4).map(|i| random_record(&mut rng, i, K_VOCAB)).collect();
        for r in &records {
            prop_assert_eq!(topn_recall_at_k_record(r, 1, k), recall_at_k(r, k));
        }
        prop_assert_eq!(topn_recall_at_k(&records, 1, k), corpus_recall_at_k(&records, k));
    }

    #[test]
    fn recall_is_monotone(seed in any::<u64>(), k in 1usize..30, dk in 0usize..10, n in 1usize..4, dn in 0usize..3) {
        let mut rng = SeedStream::new(seed);
        let r = random_record(&mut rng, 0, K_VOCAB);
        if let (Some(a), Some(b)) = (recall_at_k(&r, k), recall_at_k(&r, k + dk)) {
            prop_assert!(a <= b);
        }
        if let (Some(a), Some(b), Some(c)) = (
            topn_recall_at_k_record(&r, n, k),
            topn_recall_at_k_record(&r, n + dn, k),
            topn_recall_at_k_record(&r, n, k + dk),
        ) {
            prop_assert!(a <= b && a <= c);
        }
    }

    #[test]
    fn monotone_score_transforms_change_nothing(seed in any::<u64>(), k in 1usize..30, n in 1usize..4, scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let mut rng = SeedStream::new(seed);
        let records: Vec<EvalRecord> = (0..3).map(|i| random_record(&mut rng, i, K_VOCAB)).collect();
        let moved: Vec<EvalRecord> = records
            .iter()
            .map(|r| EvalRecord {
                candidates: r
                    .candidates
                    .iter()
                    .map(|c| Candidate { score: (scale * c.score + shift).exp(), ..*c })
                    .collect(),
                ..r.clone()
            })
            .collect();
        prop_assert_eq!(corpus_recall_at_k(&records, k), corpus_recall_at_k(&moved, k));
        prop_assert_eq!(topn_recall_at_k(&records, n, k), topn_recall_at_k(&moved, n, k));
        prop_assert_eq!(mean_recall_at_k(&records, k, K_VOCAB), mean_recall_at_k(&moved, k, K_VOCAB));
    }
}
