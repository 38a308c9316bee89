use std::collections::{BTreeSet, HashSet};

use hvbpr_core::evaluation::{auc, evaluate_report, split_leave_one_out, ScoreTable};
use hvbpr_core::hierarchy::CategoryHierarchy;
use hvbpr_core::model::{make_baseline, BaselineBudget, ItemFilter, ModelKind};
use hvbpr_core::synthdata::{generate, SynthConfig};
use hvbpr_core::training::sample_triple;
use hvbpr_core::{ColdItemSet, FeatureStore, ItemId, Model, Setting, Target, TrainingCorpus, TripleSampler, UserId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn users_are_sampled_uniformly() {
    // Users hold very different numbers of positives; sampling must not care.
    let mut pairs = Vec::new();
    for u in 0..10u32 {
        for i in 0..=u {
            pairs.push((UserId(u), ItemId(i)));
        }
    }
    let corpus = TrainingCorpus::from_pairs(10, 20, &pairs).unwrap();
    let mut s = TripleSampler::new(99);
    let n = 100_000;
    let mut counts = [0usize; 10];
    for _ in 0..n {
        counts[s.sample(&corpus).unwrap().user.index()] += 1;
    }
    let expect = n as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    // 99th percentile of chi-squared with 9 degrees of freedom
    assert!(chi2 < 21.666, "chi2 = {chi2}, counts = {counts:?}");
}

#[test]
fn negatives_never_hit_positives() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (users, items) = (30, 50);
    let mut pairs = Vec::new();
    for u in 0..users {
        for i in 0..items {
            if rng.random_bool(0.4) {
                pairs.push((UserId(u), ItemId(i)));
            }
        }
    }
    let (corpus, _) = split_leave_one_out(users as usize, items as usize, &pairs, 1).unwrap();
    for _ in 0..1_000_000 {
        let t = sample_triple(&corpus, &mut rng).unwrap();
        assert!(!corpus.is_positive(t.user, t.neg));
        assert!(corpus.train_positives(t.user).contains(&t.pos));
    }
}

#[test]
fn split_holds_out_disjoint_items_for_every_user() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (users, items) = (1000usize, 300usize);
    let mut pairs = Vec::new();
    for u in 0..users {
        let n = rng.random_range(1..=12);
        for _ in 0..n {
            pairs.push((UserId(u as u32), ItemId(rng.random_range(0..items as u32))));
        }
    }
    let (corpus, split) = split_leave_one_out(users, items, &pairs, 5).unwrap();
    let mut excluded = 0;
    for u in 0..users {
        let user = UserId(u as u32);
        let all: BTreeSet<ItemId> = pairs.iter().filter(|p| p.0 == user).map(|p| p.1).collect();
        let train: BTreeSet<ItemId> = corpus.train_positives(user).iter().copied().collect();
        let (v, t) = (split.val_item[u], split.test_item[u]);
        let held: BTreeSet<ItemId> = [v, t].into_iter().flatten().collect();
        assert!(train.is_disjoint(&held));
        assert_eq!(train.union(&held).copied().collect::<BTreeSet<_>>(), all);
        assert_eq!(corpus.positives(user), all.iter().copied().collect::<Vec<_>>());
        match all.len() {
            1 => {
                assert_eq!((v, t), (None, None));
                assert!(split.excluded_users.contains(&user));
                excluded += 1;
            }
            2 => assert!(v.is_none() && t.is_some()),
            _ => assert!(v.is_some() && t.is_some() && v != t),
        }
    }
    assert_eq!(split.excluded_users.len(), excluded);
}

#[test]
fn three_positives_reach_every_assignment() {
    let pairs: Vec<_> = (0..3).map(|i| (UserId(0), ItemId(i))).collect();
    let mut seen = HashSet::new();
    for seed in 0..200 {
        let (_, split) = split_leave_one_out(1, 5, &pairs, seed).unwrap();
        seen.insert((split.val_item[0].unwrap(), split.test_item[0].unwrap()));
    }
    assert_eq!(seen.len(), 6);
}

/// Direct transcription of the metric: mean over users of the fraction of
/// non-positive items scored strictly below the held-out one.
fn brute_force_auc(scores: &[Vec<f64>], positives: &[Vec<usize>], test: &[Option<usize>]) -> Option<f64> {
    let mut terms = Vec::new();
    for (u, t) in test.iter().enumerate() {
        let Some(t) = *t else { continue };
        let candidates: Vec<usize> = (0..scores[u].len()).filter(|j| !positives[u].contains(j)).collect();
        if candidates.is_empty() {
            continue;
        }
        let below = candidates.iter().filter(|&&j| scores[u][t] > scores[u][j]).count();
        terms.push(below as f64 / candidates.len() as f64);
    }
    (!terms.is_empty()).then(|| terms.iter().sum::<f64>() / terms.len() as f64)
}

#[test]
fn hand_built_auc_matches_pair_counting() {
    let pairs: Vec<(UserId, ItemId)> = [(0, 0), (0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (2, 0), (2, 1)]
        .iter()
        .map(|&(u, i)| (UserId(u), ItemId(i)))
        .collect();
    let (corpus, split) = split_leave_one_out(3, 6, &pairs, 2).unwrap();
    let scores = vec![
        vec![0.3, 0.9, 0.1, 0.5, 0.5, 0.2],
        vec![1.0, 1.0, 0.0, 2.0, 0.7, 0.7],
        vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    ];
    let table = ScoreTable::new(3, 6, scores.concat());
    let positives: Vec<Vec<usize>> =
        (0..3).map(|u| corpus.positives(UserId(u)).iter().map(|i| i.index()).collect()).collect();
    let test: Vec<Option<usize>> = split.test_item.iter().map(|t| t.map(|i| i.index())).collect();
    let got = auc(&table, &corpus, &split, Setting::Warm, Target::Test).unwrap();
    assert_eq!(got.auc, brute_force_auc(&scores, &positives, &test).unwrap());
    assert_eq!(got.users_evaluated, 3);
}

#[test]
fn perfect_and_constant_rankers() {
    let pairs: Vec<_> = (0..4u32).flat_map(|u| (0..3).map(move |i| (UserId(u), ItemId(u + i)))).collect();
    let (corpus, split) = split_leave_one_out(4, 10, &pairs, 0).unwrap();
    let perfect: Vec<f64> = (0..4)
        .flat_map(|u| {
            let t = split.test_item[u];
            (0..10).map(move |i| if Some(ItemId(i)) == t { 1.0 } else { 0.0 })
        })
        .collect();
    let r = auc(&ScoreTable::new(4, 10, perfect), &corpus, &split, Setting::Warm, Target::Test).unwrap();
    assert_eq!(r.auc, 1.0);
    let flat = ScoreTable::new(4, 10, vec![3.0; 40]);
    assert_eq!(auc(&flat, &corpus, &split, Setting::Warm, Target::Test).unwrap().auc, 0.0);
}

#[test]
fn random_scorer_is_calibrated() {
    let corpus = generate(&SynthConfig { users: 500, items: 1000, ..Default::default() }).unwrap();
    let (train, split) = split_leave_one_out(500, 1000, &corpus.feedback, 3).unwrap();
    let cfg = make_baseline(ModelKind::Random, &BaselineBudget { init_seed: 17, ..Default::default() }).unwrap();
    let model = Model::new(cfg, corpus.hierarchy.clone(), 500, corpus.features.dim()).unwrap();
    let frozen = model.freeze_items(&corpus.features).unwrap();
    let cold = ColdItemSet::from_training(&train, 5);
    let report = evaluate_report(&model.scorer(&frozen), &train, &split, &cold).unwrap();
    assert!((report.warm.auc - 0.5).abs() < 0.02, "{}", report.warm.auc);
    assert_eq!(report.warm.users_evaluated, 500);
}

#[test]
fn rank_by_dimension_matches_full_sort() {
    let n = 1000;
    let h = CategoryHierarchy::single_root(n);
    let budget = BaselineBudget { total_dims: 4, visual_dims: 2, scheme: None, init_seed: 4 };
    let model = Model::new(make_baseline(ModelKind::Vbpr, &budget).unwrap(), h, 1, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // coarse features create exact ties
    let feats = FeatureStore::new(3, n, (0..3 * n).map(|_| rng.random_range(-2i8..=2) as f32).collect()).unwrap();
    for dim in 0..2 {
        let mut oracle: Vec<(ItemId, f64)> = (0..n as u32)
            .map(|i| {
                let row = model.params().segments.row(hvbpr_core::BlockId(0), dim);
                let f = feats.get(ItemId(i)).unwrap();
                (ItemId(i), row.iter().zip(f).map(|(w, &x)| w * f64::from(x)).sum())
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let got = model.rank_by_dimension(&feats, dim, ItemFilter::All, 50).unwrap();
        assert_eq!(got.len(), 50);
        for (g, o) in got.iter().zip(&oracle) {
            assert_eq!(g.0, o.0);
            assert!((g.1 - o.1).abs() < 1e-12);
        }
        let frozen = model.freeze_items(&feats).unwrap();
        assert_eq!(model.scorer(&frozen).rank_by_dimension(dim, ItemFilter::All, 50).unwrap(), got);
    }
}
