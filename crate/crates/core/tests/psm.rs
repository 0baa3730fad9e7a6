use eegrisk::datamodel::{Group, RecordMeta, Sex};
use eegrisk::psm::{
    balance, common_support, fit_propensity, match_cohort, trim_to_ratio, DropReason, MatchOptions,
    Strategy,
};
use eegrisk::rng::SplitMix64;
use eegrisk::Error;
use proptest::prelude::*;

fn rec(id: &str, group: Group, age: f64, sex: Sex) -> RecordMeta {
    RecordMeta {
        subject_id: id.into(),
        site: "S".into(),
        group,
        age,
        sex,
    }
}

fn fixture8() -> Vec<RecordMeta> {
    use Group::*;
    use Sex::*;
    vec![
        rec("a1", ACr, 35.0, F),
        rec("a2", ACr, 41.0, M),
        rec("a3", ACr, 29.0, F),
        rec("a4", ACr, 38.0, M),
        rec("h1", HC, 30.0, F),
        rec("h2", HC, 33.0, M),
        rec("h3", HC, 36.0, F),
        rec("h4", HC, 27.0, M),
    ]
}

fn log_lik(records: &[RecordMeta], c: [f64; 3], center: f64) -> f64 {
    records
        .iter()
        .map(|r| {
            let t = c[0] + c[1] * (r.age - center) + c[2] * r.sex.code();
            let y = r.group.index() as f64;
            y * t - (1.0 + t.exp()).ln()
        })
        .sum()
}

/// Coarse-to-fine grid search of the log-likelihood (concave, so the
/// shrinking box keeps the maximum).
fn grid_mle(records: &[RecordMeta]) -> [f64; 3] {
    let center = 35.0;
    let mut best = [0.0; 3];
    let mut half = 5.0;
    while half > 1e-8 {
        let mut top = (f64::NEG_INFINITY, best);
        let steps = 10;
        for i in -steps..=steps {
            for j in -steps..=steps {
                for k in -steps..=steps {
                    let c = [
                        best[0] + half * i as f64 / steps as f64,
                        best[1] + 0.1 * half * j as f64 / steps as f64,
                        best[2] + half * k as f64 / steps as f64,
                    ];
                    let ll = log_lik(records, c, center);
                    if ll > top.0 {
                        top = (ll, c);
                    }
                }
            }
        }
        best = top.1;
        half *= 0.3;
    }
    [best[0] - best[1] * center, best[1], best[2]]
}

#[test]
fn logistic_matches_grid_search_mle() {
    let recs = fixture8();
    let model = fit_propensity(&recs).unwrap();
    let got = model.raw_coefficients();
    let want = grid_mle(&recs);
    for k in 0..3 {
        assert!(
            (got[k] - want[k]).abs() < 1e-4,
            "coef {k}: {} vs {}",
            got[k],
            want[k]
        );
    }
}

#[test]
fn identical_covariates_give_constant_score() {
    let mut recs = Vec::new();
    let mut rng = SplitMix64::new(3);
    for i in 0..20 {
        let age = 25.0 + 15.0 * rng.next_f64();
        let sex = if i % 3 == 0 { Sex::M } else { Sex::F };
        recs.push(rec(&format!("a{i}"), Group::ACr, age, sex));
        recs.push(rec(&format!("h{i}x"), Group::HC, age, sex));
        recs.push(rec(&format!("h{i}y"), Group::HC, age, sex));
    }
    let model = fit_propensity(&recs).unwrap();
    for r in &recs {
        assert!((model.score(r) - 1.0 / 3.0).abs() < 0.02);
    }
}

fn cohort_like(seed: u64, n_t: usize, n_c: usize) -> Vec<RecordMeta> {
    let mut rng = SplitMix64::new(seed);
    let mut recs = Vec::new();
    for i in 0..n_t {
        let sex = if rng.bernoulli(49.0 / 68.0) {
            Sex::F
        } else {
            Sex::M
        };
        recs.push(rec(
            &format!("a{i:03}"),
            Group::ACr,
            35.81 + 4.36 * rng.normal(),
            sex,
        ));
    }
    for i in 0..n_c {
        let sex = if rng.bernoulli(0.55) { Sex::F } else { Sex::M };
        recs.push(rec(
            &format!("h{i:03}"),
            Group::HC,
            30.45 + 4.81 * rng.normal(),
            sex,
        ));
    }
    recs
}

#[test]
fn older_carriers_give_positive_age_coefficient() {
    let model = fit_propensity(&cohort_like(5, 79, 158)).unwrap();
    assert!(model.raw_coefficients()[1] > 0.0);
}

#[test]
fn separation_is_reported() {
    let mut recs = Vec::new();
    for i in 0..10 {
        recs.push(rec(&format!("a{i}"), Group::ACr, 50.0 + i as f64, Sex::F));
        recs.push(rec(&format!("h{i}"), Group::HC, 20.0 + i as f64, Sex::F));
    }
    assert!(matches!(
        fit_propensity(&recs),
        Err(Error::Separation { .. })
    ));
}

#[test]
fn support_cases() {
    use Group::*;
    let s = [0.2, 0.5, 0.7, 0.2, 0.5, 0.7];
    let g = [ACr, ACr, ACr, HC, HC, HC];
    assert_eq!(common_support(&s, &g).unwrap(), (0.2, 0.7));

    let s = [0.3, 0.5, 0.1, 0.4, 0.6];
    let g = [ACr, ACr, HC, HC, HC];
    let (lo, hi) = common_support(&s, &g).unwrap();
    let outside: Vec<usize> = (0..5).filter(|&i| s[i] < lo || s[i] > hi).collect();
    assert_eq!(outside, vec![2, 4]);

    assert!(matches!(
        common_support(&[0.1, 0.2, 0.8, 0.9], &[HC, HC, ACr, ACr]),
        Err(Error::NoSupport { .. })
    ));
}

#[test]
fn support_matches_brute_force_filter() {
    let mut rng = SplitMix64::new(17);
    for _ in 0..50 {
        let mut s = Vec::new();
        let mut g = Vec::new();
        for _ in 0..40 {
            s.push(0.4 + 0.1 * rng.normal());
            g.push(Group::ACr);
            s.push(0.5 + 0.1 * rng.normal());
            g.push(Group::HC);
        }
        let (lo, hi) = common_support(&s, &g).unwrap();
        for i in 0..s.len() {
            let t_below = (0..s.len()).any(|j| g[j] == Group::ACr && s[j] <= s[i]);
            let t_above = (0..s.len()).any(|j| g[j] == Group::ACr && s[j] >= s[i]);
            let c_below = (0..s.len()).any(|j| g[j] == Group::HC && s[j] <= s[i]);
            let c_above = (0..s.len()).any(|j| g[j] == Group::HC && s[j] >= s[i]);
            let inside = t_below && t_above && c_below && c_above;
            assert_eq!(inside, s[i] >= lo && s[i] <= hi);
        }
    }
}

/// Both groups contain the four corner profiles, so their score ranges
/// coincide for any fitted model and common support drops nothing.
fn overlapping_pool(seed: u64, n_t: usize, n_c: usize) -> Vec<RecordMeta> {
    let mut recs = cohort_like(seed, n_t, n_c);
    let corners = [
        (22.0, Sex::F),
        (22.0, Sex::M),
        (45.0, Sex::F),
        (45.0, Sex::M),
    ];
    for (k, (age, sex)) in corners.into_iter().enumerate() {
        recs[k].age = age;
        recs[k].sex = sex;
        recs[n_t + k].age = age;
        recs[n_t + k].sex = sex;
    }
    for r in &mut recs {
        r.age = r.age.clamp(22.0, 45.0);
    }
    recs
}

#[test]
fn ratio_counts_reproduce_cohort_sizes() {
    let pool = overlapping_pool(1, 79, 158);
    for (ratio, kept, total) in [(2, 79, 237), (5, 31, 189), (10, 15, 173)] {
        let m = match_cohort(
            &pool,
            MatchOptions {
                ratio,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.n_kept(Group::ACr), kept);
        assert_eq!(m.n_kept(Group::HC), 158);
        assert_eq!(m.kept_rows().len(), total);
        assert!(m.achieved_ratio >= ratio as f64);
    }
}

#[test]
fn ratio_one_with_equal_groups_keeps_all() {
    let pool = overlapping_pool(2, 40, 40);
    let m = match_cohort(
        &pool,
        MatchOptions {
            ratio: 1,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(m.kept_rows().len(), 80);
    assert_eq!(m.achieved_ratio, 1.0);
}

#[test]
fn trim_drops_lowest_scores_with_id_ties() {
    use Group::*;
    let recs: Vec<RecordMeta> = ["t3", "t1", "t2", "c1", "c2", "c3", "c4"]
        .iter()
        .map(|id| rec(id, if id.starts_with('t') { ACr } else { HC }, 30.0, Sex::F))
        .collect();
    let scores = [0.5, 0.5, 0.4, 0.1, 0.1, 0.1, 0.1];
    let all: Vec<usize> = (0..7).collect();
    // floor(4 / 2) = 2: the two 0.5 scores.
    assert_eq!(trim_to_ratio(&recs, &scores, &all, 2).unwrap(), vec![0, 1]);
    // floor(4 / 4) = 1: tie at 0.5 goes to "t1".
    assert_eq!(trim_to_ratio(&recs, &scores, &all, 4).unwrap(), vec![1]);
    assert!(matches!(
        trim_to_ratio(&recs, &scores, &all, 0),
        Err(Error::Parameter(_))
    ));
    assert!(matches!(
        trim_to_ratio(&recs, &scores, &all, 5),
        Err(Error::Parameter(_))
    ));
    // Fewer treated than the target: all kept.
    assert_eq!(
        trim_to_ratio(&recs, &scores, &all, 1).unwrap(),
        vec![0, 1, 2]
    );
}

#[test]
fn balance_hand_cases() {
    use Group::*;
    let recs = vec![
        rec("t1", ACr, 40.0, Sex::F),
        rec("t2", ACr, 42.0, Sex::F),
        rec("c1", HC, 30.0, Sex::F),
        rec("c2", HC, 32.0, Sex::F),
    ];
    let b = balance(&recs, &[0, 1, 2, 3]);
    assert_eq!(b[0].0, "age");
    assert!((b[0].1 - 7.0710678118654755).abs() < 1e-9);
    assert_eq!((b[1].1, b[1].2), (0.0, true));

    let same = vec![
        rec("t1", ACr, 40.0, Sex::F),
        rec("t2", ACr, 42.0, Sex::M),
        rec("c1", HC, 40.0, Sex::F),
        rec("c2", HC, 42.0, Sex::M),
    ];
    for (_, v, _) in balance(&same, &[0, 1, 2, 3]) {
        assert_eq!(v, 0.0);
    }
}

fn shifted_pool(seed: u64, shift: f64) -> Vec<RecordMeta> {
    let mut rng = SplitMix64::new(seed);
    let mut recs = Vec::new();
    for i in 0..80 {
        let sex = if rng.bernoulli(0.6) { Sex::F } else { Sex::M };
        recs.push(rec(
            &format!("a{i:03}"),
            Group::ACr,
            32.0 + shift + 5.0 * rng.normal(),
            sex,
        ));
    }
    for i in 0..240 {
        let sex = if rng.bernoulli(0.5) { Sex::F } else { Sex::M };
        recs.push(rec(
            &format!("h{i:03}"),
            Group::HC,
            32.0 + 5.0 * rng.normal(),
            sex,
        ));
    }
    recs
}

#[test]
fn nn_matching_balances_covariates() {
    let opts = MatchOptions {
        ratio: 1,
        strategy: Strategy::Nn,
        caliper: 0.2,
    };
    // Half-SD age shift between groups.
    let m = match_cohort(&shifted_pool(9, 2.5), opts).unwrap();
    assert!(m.n_kept(Group::ACr) >= 60);
    assert_eq!(m.n_kept(Group::ACr), m.n_kept(Group::HC));
    assert!(m.balance[0].before > 0.3);
    for b in &m.balance {
        assert!(b.after.abs() < 0.1, "{}: {}", b.covariate, b.after);
    }

    // Cohort-like age separation (about 1.2 SD): greedy matching in descending
    // score order runs short of old controls, so some imbalance remains.
    let m = match_cohort(&cohort_like(9, 79, 158), opts).unwrap();
    assert!(m.balance[0].before > 0.8);
    assert!(m.balance[0].after.abs() < 0.15, "{}", m.balance[0].after);
}

#[test]
fn trimming_shifts_carrier_age_upwards() {
    // Keeping the highest scores selects the oldest carriers; the balance
    // report makes the induced shift visible.
    let pool = overlapping_pool(4, 79, 158);
    let m2 = match_cohort(
        &pool,
        MatchOptions {
            ratio: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let m10 = match_cohort(
        &pool,
        MatchOptions {
            ratio: 10,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(m10.balance[0].after > m2.balance[0].after);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trimming_is_nested_and_partitions(seed in any::<u64>()) {
        let pool = overlapping_pool(seed, 60, 130);
        let mut prev: Option<Vec<String>> = None;
        for ratio in [2usize, 5, 10] {
            let m = match_cohort(&pool, MatchOptions { ratio, ..Default::default() }).unwrap();
            let kept: Vec<String> = m.kept_ids(Group::ACr).iter().map(|s| s.to_string()).collect();
            let dropped = m.dropped_ids(Group::ACr).len() + m.dropped_ids(Group::HC).len();
            prop_assert_eq!(m.kept_rows().len() + dropped, pool.len());
            let (lo, hi) = m.support;
            for i in m.kept_rows() {
                prop_assert!(m.scores[i] >= lo && m.scores[i] <= hi);
            }
            prop_assert!(m.achieved_ratio >= ratio as f64);
            let n_c = m.n_kept(Group::HC);
            prop_assert_eq!(m.achieved_ratio == ratio as f64, n_c.is_multiple_of(ratio) && m.n_kept(Group::ACr) == n_c / ratio);
            if let Some(p) = &prev {
                prop_assert!(kept.iter().all(|id| p.contains(id)));
            }
            prev = Some(kept);
        }
    }

    #[test]
    fn affine_age_rescaling_keeps_selection(seed in any::<u64>(), a in 0.3f64..1.5, c in -5.0f64..5.0) {
        let pool = overlapping_pool(seed, 40, 100);
        let moved: Vec<RecordMeta> = pool
            .iter()
            .map(|r| RecordMeta { age: a * r.age + c + 10.0, ..r.clone() })
            .collect();
        for ratio in [2usize, 5] {
            let m1 = match_cohort(&pool, MatchOptions { ratio, ..Default::default() }).unwrap();
            let m2 = match_cohort(&moved, MatchOptions { ratio, ..Default::default() }).unwrap();
            prop_assert_eq!(m1.kept_rows(), m2.kept_rows());
        }
    }
}

#[test]
fn drop_reasons_recorded() {
    let pool = overlapping_pool(8, 79, 158);
    let m = match_cohort(
        &pool,
        MatchOptions {
            ratio: 5,
            ..Default::default()
        },
    )
    .unwrap();
    let ratio_drops = m
        .dropped
        .iter()
        .filter(|d| **d == Some(DropReason::Ratio))
        .count();
    assert_eq!(ratio_drops, 79 - 31);
    assert!(m.scores_csv().lines().count() == pool.len() + 1);
    assert_eq!(m.histogram.before[0].iter().sum::<usize>(), 158);
    assert_eq!(m.histogram.after[1].iter().sum::<usize>(), 31);
}
