//! Stratified splits, cross-validation, learning curves and confusion
//! metrics.
//!
//! Labels are class indices (HC = 0, ACr = 1). Every random choice starts
//! from the records sorted by `subject_id`, so results do not depend on row
//! order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::tree::{train_tree, TreeParams};
use crate::datamodel::{FeatureTable, Group, RecordMeta};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

/// `floor(x + 0.5)`.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

fn check_labels(labels: &[usize]) -> Result<usize> {
    match labels.iter().find(|&&l| l > 1) {
        Some(l) => Err(Error::Label(format!("labels must be 0 or 1, found {l}"))),
        None => Ok(2),
    }
}

/// Row indices of each class, sorted by subject id.
fn class_rows(records: &[RecordMeta], labels: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); 2];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    for rows in &mut out {
        rows.sort_by(|&a, &b| {
            records[a]
                .subject_id
                .cmp(&records[b].subject_id)
                .then(a.cmp(&b))
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRows {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per class, `round_half_up(n_c * test_fraction)` records go to the test
/// side, chosen by a seeded shuffle.
pub fn stratified_split_rows(
    records: &[RecordMeta],
    labels: &[usize],
    test_fraction: f64,
    seed: u64,
) -> Result<SplitRows> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    check_labels(labels)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut rows) in class_rows(records, labels).into_iter().enumerate() {
        if rows.len() < 2 {
            return Err(Error::Split(format!(
                "class {} has {} record(s); at least 2 are needed",
                Group::from_index(class).map_or("?", Group::as_str),
                rows.len()
            )));
        }
        let n_test = round_half_up(rows.len() as f64 * test_fraction);
        SplitMix64::new(derive_seed(seed, class as u64)).shuffle(&mut rows);
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitRows { train, test })
}

pub fn stratified_split(
    table: &FeatureTable,
    test_fraction: f64,
    seed: u64,
) -> Result<(FeatureTable, FeatureTable)> {
    let s = stratified_split_rows(table.records(), &table.labels(), test_fraction, seed)?;
    Ok((table.select_rows(&s.train), table.select_rows(&s.test)))
}

/// Fold index per row. Within each class the shuffled records are dealt
/// round-robin, continuing the deal from the previous class so total fold
/// sizes also differ by at most one.
pub fn fold_assignment(
    records: &[RecordMeta],
    labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Parameter(format!(
            "cross-validation needs k >= 2, got {k}"
        )));
    }
    if labels.len() < k {
        return Err(Error::Parameter(format!(
            "{k} folds need at least {k} records, got {}",
            labels.len()
        )));
    }
    check_labels(labels)?;
    let mut fold = vec![0; labels.len()];
    let mut dealt = 0;
    for (class, mut rows) in class_rows(records, labels).into_iter().enumerate() {
        SplitMix64::new(derive_seed(seed, 100 + class as u64)).shuffle(&mut rows);
        for r in rows {
            fold[r] = dealt % k;
            dealt += 1;
        }
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldScore {
    pub n_train: usize,
    pub n_test: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvScores {
    pub folds: Vec<FoldScore>,
    pub mean_train: f64,
    pub mean_test: f64,
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// Stratified k-fold accuracy of a tree trained with `params`.
pub fn cross_validate(
    table: &FeatureTable,
    labels: &[usize],
    params: TreeParams,
    k: usize,
    seed: u64,
) -> Result<CvScores> {
    if labels.len() != table.n_rows() {
        return Err(Error::Validation("one label per row required".into()));
    }
    let fold = fold_assignment(table.records(), labels, k, seed)?;
    let folds: Vec<FoldScore> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&r| fold[r] == f);
            let tr = table.select_rows(&train);
            let te = table.select_rows(&test);
            let y_tr: Vec<usize> = train.iter().map(|&r| labels[r]).collect();
            let y_te: Vec<usize> = test.iter().map(|&r| labels[r]).collect();
            let model = train_tree(&tr, &y_tr, params)?;
            Ok(FoldScore {
                n_train: train.len(),
                n_test: test.len(),
                train_accuracy: accuracy(&model.predict_table(&tr)?, &y_tr),
                test_accuracy: accuracy(&model.predict_table(&te)?, &y_te),
            })
        })
        .collect::<Result<_>>()?;
    let mean_train = folds.iter().map(|f| f.train_accuracy).sum::<f64>() / k as f64;
    let mean_test = folds.iter().map(|f| f.test_accuracy).sum::<f64>() / k as f64;
    Ok(CvScores {
        folds,
        mean_train,
        mean_test,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub fraction: f64,
    pub n: usize,
    pub train_score: f64,
    pub validation_score: f64,
}

/// `0.1, 0.2, ..., 1.0`.
pub fn default_sizes() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// For each fraction `s`, a stratified subsample of about `s * n` records
/// (per class `round_half_up(s * n_c)`) is cross-validated. Sizes that
/// leave fewer than `k` records, or a class with none, are skipped.
pub fn learning_curve(
    table: &FeatureTable,
    labels: &[usize],
    params: TreeParams,
    sizes: &[f64],
    k: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if sizes.is_empty() || sizes.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
        return Err(Error::Parameter(
            "learning-curve sizes must lie in (0, 1]".into(),
        ));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter(
            "learning-curve sizes must be ascending".into(),
        ));
    }
    check_labels(labels)?;
    let classes = class_rows(table.records(), labels);
    let points: Vec<Option<CurvePoint>> = sizes
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut rows = Vec::new();
            for (class, members) in classes.iter().enumerate() {
                let mut m = members.clone();
                SplitMix64::new(derive_seed(seed, 200 + 2 * i as u64 + class as u64))
                    .shuffle(&mut m);
                let take = round_half_up(s * m.len() as f64).min(m.len());
                if take == 0 {
                    return Ok(None);
                }
                rows.extend_from_slice(&m[..take]);
            }
            rows.sort_unstable();
            if rows.len() < k {
                return Ok(None);
            }
            let sub = table.select_rows(&rows);
            let y: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
            let cv = cross_validate(&sub, &y, params, k, derive_seed(seed, 300 + i as u64))?;
            Ok(Some(CurvePoint {
                fraction: s,
                n: rows.len(),
                train_score: cv.mean_train,
                validation_score: cv.mean_test,
            }))
        })
        .collect::<Result<_>>()?;
    for (s, p) in sizes.iter().zip(&points) {
        if p.is_none() {
            log::warn!("learning-curve size {s} leaves too few records for {k} folds; skipped");
        }
    }
    Ok(points.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub positive: Group,
}

impl ConfusionMatrix {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// 2x2 contingency counts with `positive` as the positive class.
pub fn confusion(
    predictions: &[usize],
    labels: &[usize],
    positive: Group,
) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    if let Some(p) = predictions.iter().find(|&&p| p > 1) {
        return Err(Error::Label(format!("prediction of unseen class {p}")));
    }
    let pos = positive.index();
    let mut c = ConfusionMatrix {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
        positive,
    };
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p == pos, l == pos) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// A count ratio kept as numerator and denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub num: usize,
    pub den: usize,
}

impl Rate {
    fn new(num: usize, den: usize) -> Option<Rate> {
        (den > 0).then_some(Rate { num, den })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: Rate,
    pub precision: Option<Rate>,
    pub recall: Option<Rate>,
    /// `2TP / (2TP + FP + FN)`, the harmonic mean of precision and recall;
    /// undefined unless both are defined and nonzero.
    pub f1: Option<Rate>,
}

pub fn metrics_from_confusion(c: &ConfusionMatrix) -> Result<Metrics> {
    if c.n() == 0 {
        return Err(Error::EmptyInput("confusion matrix has no records".into()));
    }
    let precision = Rate::new(c.tp, c.tp + c.fp);
    let recall = Rate::new(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(_), Some(_)) if c.tp > 0 => Rate::new(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        _ => None,
    };
    Ok(Metrics {
        accuracy: Rate {
            num: c.tp + c.tn,
            den: c.n(),
        },
        precision,
        recall,
        f1,
    })
}

/// Area under the ROC curve as the Mann–Whitney statistic with average ranks
/// for ties. `scores` are probabilities of `positive`.
pub fn roc_auc(scores: &[f64], labels: &[usize], positive: Group) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    let pos = positive.index();
    let n_pos = labels.iter().filter(|&&l| l == pos).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&r| labels[r] == pos).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}
