use eegrisk::classify::tree::fit;
use eegrisk::classify::{
    cohens_d, correlation_prune, fit_classifier, greedy_feature_select, top_k_importance,
    train_tree, ClassifyConfig, EvalProtocol, PruneReason, TreeModel, TreeParams,
};
use eegrisk::datamodel::{FeatureTable, Group, RecordMeta, Sex};
use eegrisk::evaluate::cross_validate;
use eegrisk::rng::SplitMix64;
use eegrisk::stats::pearson;
use eegrisk::Error;
use proptest::prelude::*;

fn name(j: usize) -> String {
    format!("power__delta__C{}", j + 1)
}

fn records(labels: &[usize]) -> Vec<RecordMeta> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| RecordMeta {
            subject_id: format!("S{i:04}"),
            site: if i % 2 == 0 { "A" } else { "B" }.into(),
            group: Group::from_index(l).unwrap(),
            age: 30.0 + (i % 10) as f64,
            sex: if i % 3 == 0 { Sex::M } else { Sex::F },
        })
        .collect()
}

fn table(labels: &[usize], columns: Vec<Vec<f64>>) -> FeatureTable {
    let names = (0..columns.len()).map(name).collect();
    FeatureTable::new(records(labels), names, columns).unwrap()
}

fn balanced(n: usize) -> Vec<usize> {
    (0..n).map(|i| i % 2).collect()
}

fn accuracy(m: &TreeModel, t: &FeatureTable, y: &[usize]) -> f64 {
    let p = m.predict_table(t).unwrap();
    p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

/// Best training accuracy of any single threshold on any feature, by
/// enumerating every cut between sorted values.
fn best_stump(columns: &[Vec<f64>], y: &[usize]) -> f64 {
    let n = y.len();
    let mut best: f64 = 0.0;
    for col in columns {
        let mut cuts: Vec<f64> = col.clone();
        cuts.push(f64::NEG_INFINITY);
        for &c in &cuts {
            let mut side = [[0usize; 2]; 2];
            for i in 0..n {
                side[usize::from(col[i] > c)][y[i]] += 1;
            }
            let hits: usize = side.iter().map(|s| s[0].max(s[1])).sum();
            best = best.max(hits as f64 / n as f64);
        }
    }
    best
}

#[test]
fn xor_needs_depth_two() {
    let x0 = vec![0.0, 0.0, 1.0, 1.0];
    let x1 = vec![0.0, 1.0, 0.0, 1.0];
    let y = [0, 1, 1, 0];
    let t = table(&y, vec![x0.clone(), x1.clone()]);
    let p = |d| TreeParams {
        max_depth: d,
        min_leaf: 1,
        seed: 0,
    };
    let deep = train_tree(&t, &y, p(2)).unwrap();
    assert_eq!(accuracy(&deep, &t, &y), 1.0);
    let stump = train_tree(&t, &y, p(1)).unwrap();
    let oracle = best_stump(&[x0, x1], &y);
    assert!(oracle <= 0.75);
    assert!(accuracy(&stump, &t, &y) <= oracle);
}

#[test]
fn xor_clusters_stump_bound() {
    let mut rng = SplitMix64::new(3);
    let mut cols = vec![Vec::new(), Vec::new()];
    let mut y = Vec::new();
    for (cx, cy, label) in [(0.0, 0.0, 0), (0.0, 1.0, 1), (1.0, 0.0, 1), (1.0, 1.0, 0)] {
        for _ in 0..25 {
            cols[0].push(cx + 0.1 * rng.normal());
            cols[1].push(cy + 0.1 * rng.normal());
            y.push(label);
        }
    }
    let oracle = best_stump(&cols, &y);
    assert!(oracle <= 0.75 + 1e-12, "{oracle}");
    let t = table(&y, cols);
    let stump = train_tree(
        &t,
        &y,
        TreeParams {
            max_depth: 1,
            min_leaf: 1,
            seed: 0,
        },
    )
    .unwrap();
    assert!(accuracy(&stump, &t, &y) <= oracle);
}

#[test]
fn separable_line_and_importance() {
    let x: Vec<f64> = (0..100).map(|i| i as f64 - 49.5).collect();
    let y: Vec<usize> = x.iter().map(|&v| usize::from(v > 0.0)).collect();
    let noise: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64).collect();
    let t = table(&y, vec![noise, x]);
    let m = train_tree(&t, &y, TreeParams::default()).unwrap();
    assert_eq!(accuracy(&m, &t, &y), 1.0);
    assert_eq!(m.n_splits(), 1);
    assert_eq!(m.importances, vec![0.0, 1.0]);
    assert_eq!(top_k_importance(&m, 1), vec![name(1)]);
    assert_eq!(top_k_importance(&m, 5), vec![name(1), name(0)]);
}

#[test]
fn model_file_round_trip() {
    let mut rng = SplitMix64::new(8);
    let y = balanced(60);
    let cols: Vec<Vec<f64>> = (0..4)
        .map(|j| {
            y.iter()
                .map(|&l| l as f64 * 0.3 * j as f64 + rng.normal())
                .collect()
        })
        .collect();
    let t = table(&y, cols);
    let m = train_tree(&t, &y, TreeParams::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.txt");
    m.write(&path).unwrap();
    let back = TreeModel::read(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(
        back.predict_table(&t).unwrap(),
        m.predict_table(&t).unwrap()
    );
}

#[test]
fn prune_duplicates_negations_and_constants() {
    let mut rng = SplitMix64::new(5);
    let y = balanced(50);
    let a: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
    let b: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
    let neg: Vec<f64> = b.iter().map(|v| -v).collect();
    // r = 0.5 by construction between a and `half`.
    let e: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
    let half: Vec<f64> = a.iter().zip(&e).map(|(x, z)| 0.5 * x + 0.866 * z).collect();
    let t = table(&y, vec![a.clone(), a.clone(), b, neg, vec![3.0; 50], half]);
    let out = correlation_prune(&t, 0.9).unwrap();
    assert_eq!(out.table.names(), &[name(0), name(2), name(5)]);
    assert_eq!(out.dropped[0].reason, PruneReason::Constant);
    assert_eq!(out.dropped[0].feature, name(4));
    let dropped: Vec<&str> = out.dropped.iter().map(|d| d.feature.as_str()).collect();
    assert!(dropped.contains(&name(1).as_str()) && dropped.contains(&name(3).as_str()));
    assert!(matches!(
        correlation_prune(&t, 0.0),
        Err(Error::Parameter(_))
    ));
}

fn correlated_block(seed: u64, n: usize, n_features: usize) -> FeatureTable {
    let mut rng = SplitMix64::new(seed);
    let latent: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..n).map(|_| rng.normal()).collect())
        .collect();
    let cols = (0..n_features)
        .map(|j| {
            let w = 0.05 + rng.next_f64() * 0.6;
            let src = &latent[j % 4];
            src.iter().map(|v| v + w * rng.normal()).collect()
        })
        .collect();
    table(&balanced(n), cols)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prune_leaves_no_pair_above_threshold(seed in any::<u64>(), thr in 0.5f64..0.99) {
        let t = correlated_block(seed, 40, 16);
        let out = correlation_prune(&t, thr).unwrap();
        let k = out.table.n_features();
        prop_assert!(k >= 1);
        for i in 0..k {
            for j in i + 1..k {
                let r = pearson(out.table.column(i), out.table.column(j)).unwrap();
                prop_assert!(r.abs() <= thr + 1e-12, "{} {}", r, thr);
            }
        }
        prop_assert_eq!(k + out.dropped.len(), t.n_features());
    }

    #[test]
    fn monotone_transform_keeps_routing(seed in any::<u64>(), which in 0usize..3) {
        let mut rng = SplitMix64::new(seed);
        let y = balanced(60);
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| y.iter().map(|&l| 0.8 * l as f64 + rng.normal()).collect())
            .collect();
        let mut moved = cols.clone();
        moved[which] = moved[which].iter().map(|v| v.exp()).collect();
        let (t1, t2) = (table(&y, cols), table(&y, moved));
        let m1 = train_tree(&t1, &y, TreeParams::default()).unwrap();
        let m2 = train_tree(&t2, &y, TreeParams::default()).unwrap();
        prop_assert_eq!(m1.predict_table(&t1).unwrap(), m2.predict_table(&t2).unwrap());
        prop_assert_eq!(m1.n_splits(), m2.n_splits());
    }

    #[test]
    fn cohens_d_affine(seed in any::<u64>(), alpha in 0.01f64..100.0, beta in -100.0f64..100.0) {
        let mut rng = SplitMix64::new(seed);
        let a: Vec<f64> = (0..12).map(|_| rng.normal() + 0.4).collect();
        let b: Vec<f64> = (0..9).map(|_| rng.normal()).collect();
        let d = cohens_d(&a, &b).unwrap();
        let f = |v: &[f64], s: f64| -> Vec<f64> { v.iter().map(|x| s * x + beta).collect() };
        let up = cohens_d(&f(&a, alpha), &f(&b, alpha)).unwrap();
        let down = cohens_d(&f(&a, -alpha), &f(&b, -alpha)).unwrap();
        prop_assert!((up - d).abs() < 1e-9 * (1.0 + d.abs()));
        prop_assert!((down + d).abs() < 1e-9 * (1.0 + d.abs()));
        prop_assert_eq!(cohens_d(&b, &a).unwrap(), -d);
    }
}

#[test]
fn cohens_d_hand_cases() {
    let d = cohens_d(&[2.0, 4.0], &[1.0, 3.0]).unwrap();
    assert!((d - 1.0 / 2f64.sqrt()).abs() < 1e-12, "{d}");
    assert_eq!(cohens_d(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), -d);
    assert_eq!(cohens_d(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    assert!(matches!(
        cohens_d(&[5.0, 5.0], &[5.0, 5.0]),
        Err(Error::UndefinedEffect)
    ));
}

fn informative_plus_noise(seed: u64, n: usize, n_noise: usize, shift: f64) -> FeatureTable {
    let mut rng = SplitMix64::new(seed);
    let y = balanced(n);
    let mut cols: Vec<Vec<f64>> = (0..n_noise)
        .map(|_| (0..n).map(|_| rng.normal()).collect())
        .collect();
    let info: Vec<f64> = y
        .iter()
        .map(|&l| shift * (2.0 * l as f64 - 1.0) + rng.normal())
        .collect();
    cols.insert(7, info);
    table(&y, cols)
}

#[test]
fn selection_finds_the_informative_feature() {
    let t = informative_plus_noise(11, 200, 50, 1.645);
    let y = t.labels();
    let s = greedy_feature_select(&t, &y, 0.8, EvalProtocol::default(), 1).unwrap();
    assert_eq!(s.selected, vec![7]);
    assert_eq!(s.weights, vec![1.0]);
    assert!(s.accuracy[7] > 0.9, "{}", s.accuracy[7]);
    let noise_max = s
        .accuracy
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != 7)
        .map(|(_, a)| *a)
        .fold(0.0, f64::max);
    assert!(noise_max < 0.7, "{noise_max}");
}

#[test]
fn selection_threshold_extremes() {
    let t = informative_plus_noise(12, 80, 8, 1.0);
    let y = t.labels();
    let all = greedy_feature_select(&t, &y, 0.0, EvalProtocol::default(), 2).unwrap();
    assert_eq!(all.selected, (0..9).collect::<Vec<_>>());
    assert!((all.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    match greedy_feature_select(&t, &y, 1.01, EvalProtocol::default(), 2) {
        Err(Error::EmptySelection {
            threshold,
            max_accuracy,
        }) => {
            assert_eq!(threshold, 1.01);
            assert_eq!(
                max_accuracy,
                all.accuracy.iter().copied().fold(0.0, f64::max)
            );
        }
        other => panic!("{other:?}"),
    }
}

// Exact equality needs a tree shallow enough to have no equal-gain ties,
// since the final retrain orders ties by selection weight.
#[test]
fn vacuous_selection_reproduces_full_model() {
    let t = correlated_block(21, 80, 12);
    let y: Vec<usize> = t
        .column(0)
        .iter()
        .zip(t.column(5))
        .map(|(a, b)| usize::from(a + 0.5 * b > 0.0))
        .collect();
    let recs: Vec<RecordMeta> = t
        .records()
        .iter()
        .zip(&y)
        .map(|(r, &l)| RecordMeta {
            group: Group::from_index(l).unwrap(),
            ..r.clone()
        })
        .collect();
    let t = FeatureTable::new(recs, t.names().to_vec(), t.columns().to_vec()).unwrap();
    let cfg = ClassifyConfig {
        corr_threshold: 0.99,
        top_k: 1000,
        accuracy_threshold: 0.0,
        tree: TreeParams {
            max_depth: 3,
            min_leaf: 5,
            seed: 0,
        },
        ..ClassifyConfig::default()
    };
    let fit = fit_classifier(&t, &cfg, 4).unwrap();
    let direct = train_tree(
        &fit.fit.prune.table,
        &y,
        TreeParams {
            seed: 4,
            ..cfg.tree
        },
    )
    .unwrap();
    assert_eq!(fit.model.features, direct.features);
    assert_eq!(fit.model.nodes, direct.nodes);
    assert_eq!(fit.model.importances, direct.importances);
}

#[test]
fn classifier_fit_is_deterministic() {
    let t = informative_plus_noise(30, 120, 30, 1.2);
    let cfg = ClassifyConfig::default();
    let a = fit_classifier(&t, &cfg, 9).unwrap();
    let b = fit_classifier(&t, &cfg, 9).unwrap();
    assert_eq!(a.fit.selection, b.fit.selection);
    assert_eq!(a.model, b.model);
    assert_eq!(a.model.to_text(), b.model.to_text());
    assert!(a.fit.selection.selected_names().contains(&name(7)));
}

#[test]
fn single_class_gives_one_leaf() {
    let y = vec![1; 10];
    let t = table(&y, vec![(0..10).map(|i| i as f64).collect()]);
    let m = train_tree(&t, &y, TreeParams::default()).unwrap();
    assert_eq!(m.nodes.len(), 1);
    assert_eq!(m.predict(&[3.0]), 1);
}

#[test]
fn permutation_null_cv_is_chance() {
    let mut means = Vec::new();
    for trial in 0..40u64 {
        let mut rng = SplitMix64::new(900 + trial);
        let mut y = balanced(200);
        rng.shuffle(&mut y);
        let cols: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..200).map(|_| rng.normal()).collect())
            .collect();
        let t = table(&y, cols);
        let cv = cross_validate(&t, &y, TreeParams::default(), 10, trial).unwrap();
        means.push(cv.mean_test);
    }
    let inside = means.iter().filter(|m| (*m - 0.5).abs() <= 0.1).count();
    assert!(inside >= 38, "{means:?}");
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    assert!((grand - 0.5).abs() < 0.03, "{grand}");
}

#[test]
fn fit_rejects_bad_priority() {
    let x = [0.0, 1.0, 2.0, 3.0];
    let r = fit(
        vec!["a".into()],
        &[&x],
        &[0, 0, 1, 1],
        TreeParams::default(),
        &[0, 0],
    );
    assert!(matches!(r, Err(Error::Parameter(_))));
}
