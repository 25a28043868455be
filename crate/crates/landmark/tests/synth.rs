use std::collections::HashMap;

use landmark::synth::{
    compute_marginals, freq_predict, generate_dataset, BBox, Entity, SceneInstance, Split, SynthConfig, Triplet,
};
use landmark::tensor::Tensor;

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        train_scenes: 400,
        eval_scenes: 100,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn zero_skew_gives_uniform_predicate_frequencies() {
    // chi-square with 9 degrees of freedom; 27.88 is the 0.999 quantile
    let cfg = SynthConfig {
        zipf_exponent: 0.0,
        zero_shot_pairs: 0,
        ..SynthConfig::default()
    };
    let d = generate_dataset(&cfg).unwrap();
    let counts = d.predicate_counts(Split::Train);
    assert_eq!(counts[0], 0);
    let total: usize = counts.iter().sum();
    let expected = total as f64 / (counts.len() - 1) as f64;
    let chi: f64 = counts[1..].iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    assert!(chi < 27.88, "chi-square {chi:.2} for counts {counts:?}");
}

#[test]
fn default_config_has_a_long_tail() {
    let d = generate_dataset(&SynthConfig::default()).unwrap();
    let counts = d.predicate_counts(Split::Train);
    let head = *counts[1..].iter().max().unwrap();
    let tail = *counts[1..].iter().min().unwrap();
    assert!(tail > 0);
    assert!(head >= 10 * tail, "head {head} tail {tail}: {counts:?}");
}

#[test]
fn zero_shot_triplets_never_occur_in_training() {
    let d = generate_dataset(&SynthConfig::default()).unwrap();
    let zs = d.zero_shot_triplets();
    assert!(!zs.is_empty());
    let mut train_types = HashMap::new();
    for s in &d.train {
        for t in &s.gt_triplets {
            *train_types
                .entry((s.entities[t.subject].class, t.predicate, s.entities[t.object].class))
                .or_insert(0usize) += 1;
        }
    }
    for (si, t) in zs {
        let s = &d.eval[si];
        let key = (s.entities[t.subject].class, t.predicate, s.entities[t.object].class);
        assert_eq!(train_types.get(&key), None, "{key:?}");
    }
}

#[test]
fn regeneration_is_bit_identical() {
    let a = generate_dataset(&small(3)).unwrap();
    let b = generate_dataset(&small(3)).unwrap();
    assert_eq!(a, b);
    let s = &a.eval[5];
    let fa: Vec<u64> = a.relation_feature(s, 0, 1).data().iter().map(|v| v.to_bits()).collect();
    let fb: Vec<u64> = b.relation_feature(s, 0, 1).data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(fa, fb);
    assert_ne!(a, generate_dataset(&small(4)).unwrap());
}

#[test]
fn marginals_match_an_independent_count() {
    let d = generate_dataset(&SynthConfig::default()).unwrap();
    let (e, k) = (20, 11);
    let eps = 1e-3;
    let t = compute_marginals(&d.train, e, k, eps).unwrap();

    // second counter: keyed by class pairs, aggregated afterwards
    let mut by_triplet: HashMap<(usize, usize, usize), u64> = HashMap::new();
    for s in &d.train {
        for tr in &s.gt_triplets {
            let key = (s.entities[tr.subject].class, s.entities[tr.object].class, tr.predicate);
            *by_triplet.entry(key).or_default() += 1;
        }
    }
    for cls in 0..e {
        let mut sub = vec![eps; k];
        let mut obj = vec![eps; k];
        for (&(cs, co, p), &n) in &by_triplet {
            if cs == cls {
                sub[p] += n as f64;
            }
            if co == cls {
                obj[p] += n as f64;
            }
        }
        let (zs, zo): (f64, f64) = (sub.iter().sum(), obj.iter().sum());
        for p in 0..k {
            assert!((t.sub_row(cls)[p] - sub[p] / zs).abs() < 1e-12);
            assert!((t.obj_row(cls)[p] - obj[p] / zo).abs() < 1e-12);
        }
        assert!((t.sub_row(cls).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((t.obj_row(cls).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    for cs in 0..e {
        for co in 0..e {
            for p in 0..k {
                assert_eq!(t.freq_cell(cs, co)[p], by_triplet.get(&(cs, co, p)).copied().unwrap_or(0));
            }
        }
    }
}

#[test]
fn freq_matches_brute_force_recount() {
    let d = generate_dataset(&small(5)).unwrap();
    let t = compute_marginals(&d.train, 20, 11, 1e-3).unwrap();
    let mut rng = landmark::rng::SeedStream::new(99);
    for _ in 0..50 {
        let (cs, co) = (rng.below(20), rng.below(20));
        let mut counts = [0.0f64; 11];
        for s in &d.train {
            for tr in &s.gt_triplets {
                if s.entities[tr.subject].class == cs && s.entities[tr.object].class == co {
                    counts[tr.predicate] += 1.0;
                }
            }
        }
        let total: f64 = counts.iter().sum();
        let pred = freq_predict(&t, cs, co).unwrap();
        assert_eq!(pred.informative, total > 0.0);
        for (p, c) in counts.iter().enumerate() {
            let expected = if total > 0.0 { c / total } else { 1.0 / 11.0 };
            assert!((pred.distribution.values()[p] - expected).abs() < 1e-15);
        }
    }
}

fn fixture_scene(classes: &[usize], triplets: &[(usize, usize, usize)]) -> SceneInstance {
    let bbox = BBox {
        cx: 0.5,
        cy: 0.5,
        w: 0.4,
        h: 0.4,
    };
    SceneInstance {
        id: 0,
        split: Split::Train,
        entities: classes.iter().map(|&class| Entity { class, bbox }).collect(),
        gt_triplets: triplets
            .iter()
            .map(|&(subject, object, predicate)| Triplet {
                subject,
                object,
                predicate,
            })
            .collect(),
        entity_features: Tensor::zeros(vec![classes.len(), 2]),
        feature_seed: 1,
    }
}

#[test]
fn hand_built_fixture_matches_hand_counts() {
    // classes 0..3, predicates 0..4
    let scenes = [
        fixture_scene(&[0, 1, 2], &[(0, 1, 1), (1, 2, 2)]),
        fixture_scene(&[0, 0, 1], &[(0, 2, 1), (1, 2, 3)]),
        fixture_scene(&[2, 1], &[(0, 1, 2)]),
    ];
    let t = compute_marginals(&scenes, 3, 4, 0.0).unwrap();
    // class 0 as subject: predicate 1 twice, predicate 3 once
    assert_eq!(t.sub_row(0), &[0.0, 2.0 / 3.0, 0.0, 1.0 / 3.0]);
    // class 1 as subject: predicate 2 once
    assert_eq!(t.sub_row(1), &[0.0, 0.0, 1.0, 0.0]);
    assert_eq!(t.sub_row(2), &[0.0, 0.0, 1.0, 0.0]);
    // class 1 as object: predicates 1, 1, 3, 2
    assert_eq!(t.obj_row(1), &[0.0, 0.5, 0.25, 0.25]);
    assert_eq!(t.obj_row(2), &[0.0, 0.0, 1.0, 0.0]);
    // class 0 never an object: all-zero row falls back to uniform
    assert_eq!(t.obj_row(0), &[0.25; 4]);
    assert_eq!(t.freq_cell(0, 1), &[0, 2, 0, 1]);
    assert_eq!(t.freq_cell(1, 2), &[0, 0, 1, 0]);
    assert_eq!(t.freq_cell(2, 1), &[0, 0, 1, 0]);
}

#[test]
fn pattern_channels_outshine_distractors() {
    let d = generate_dataset(&small(6)).unwrap();
    let distract = d.process.distractor_channels();
    let area = 49;
    for k in 1..11 {
        let pattern = d.process.pattern_channels(k).to_vec();
        let (mut sum_p, mut sum_d, mut n) = (0.0, 0.0, 0usize);
        for s in &d.train {
            for t in s.gt_triplets.iter().filter(|t| t.predicate == k) {
                let f = d.relation_feature(s, t.subject, t.object);
                let mean = |chs: &[usize]| -> f64 {
                    chs.iter().map(|c| f.data()[c * area..(c + 1) * area].iter().sum::<f64>()).sum::<f64>()
                        / (chs.len() * area) as f64
                };
                sum_p += mean(&pattern);
                sum_d += mean(&distract);
                n += 1;
            }
        }
        assert!(n > 0, "predicate {k} never annotated");
        let (mp, md) = (sum_p / n as f64, sum_d / n as f64);
        assert!(mp > md, "predicate {k}: pattern {mp:.3} vs distractor {md:.3}");
    }
}

#[test]
fn scenes_respect_structural_invariants() {
    let d = generate_dataset(&small(8)).unwrap();
    d.validate().unwrap();
    for s in d.train.iter().chain(&d.eval) {
        assert_eq!(s.entity_features.shape(), &[s.num_entities(), 32]);
        for t in &s.gt_triplets {
            assert_ne!(t.subject, t.object);
        }
    }
}
