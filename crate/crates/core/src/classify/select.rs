//! Threshold-based greedy feature selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::TreeParams;
use crate::datamodel::FeatureTable;
use crate::error::{Error, Result};
use crate::evaluate::cross_validate;
use crate::rng::derive_seed;

/// How single-feature accuracy is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    pub folds: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            folds: 10,
            max_depth: 2,
            min_leaf: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    /// Candidate features in input order.
    pub features: Vec<String>,
    /// Single-feature CV accuracy per candidate.
    pub accuracy: Vec<f64>,
    /// Indices into `features`, ascending.
    pub selected: Vec<usize>,
    /// Per selected feature, `accuracy / sum(accuracy over selected)`.
    pub weights: Vec<f64>,
    pub threshold: f64,
}

impl SelectionOutcome {
    pub fn selected_names(&self) -> Vec<String> {
        self.selected
            .iter()
            .map(|&i| self.features[i].clone())
            .collect()
    }

    /// Positions within [`SelectionOutcome::selected`] by descending weight,
    /// ties by position. Used as the split tie-break order of the final tree.
    pub fn priority(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.selected.len()).collect();
        order.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]).then(a.cmp(&b)));
        order
    }
}

/// Keeps each feature whose single-feature tree reaches CV accuracy
/// `>= threshold`. The same fold assignment (from `seed`) is used for every
/// feature.
pub fn greedy_feature_select(
    table: &FeatureTable,
    labels: &[usize],
    threshold: f64,
    protocol: EvalProtocol,
    seed: u64,
) -> Result<SelectionOutcome> {
    if !(0.0..=1.0).contains(&threshold) {
        log::warn!("accuracy threshold {threshold} lies outside [0, 1]");
    }
    if threshold.is_nan() {
        return Err(Error::Parameter("accuracy threshold is NaN".into()));
    }
    if table.n_features() == 0 {
        return Err(Error::EmptyInput("no candidate features".into()));
    }
    let params = TreeParams {
        max_depth: protocol.max_depth,
        min_leaf: protocol.min_leaf,
        seed,
    };
    let fold_seed = derive_seed(seed, 0x5e1ec7);
    let accuracy: Vec<f64> = (0..table.n_features())
        .into_par_iter()
        .map(|j| {
            let one = table.select_features(&[j]);
            Ok(cross_validate(&one, labels, params, protocol.folds, fold_seed)?.mean_test)
        })
        .collect::<Result<_>>()?;
    let selected: Vec<usize> = (0..accuracy.len())
        .filter(|&j| accuracy[j] >= threshold)
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptySelection {
            threshold,
            max_accuracy: accuracy.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    let total: f64 = selected.iter().map(|&j| accuracy[j]).sum();
    let weights = selected
        .iter()
        .map(|&j| {
            if total > 0.0 {
                accuracy[j] / total
            } else {
                1.0 / selected.len() as f64
            }
        })
        .collect();
    Ok(SelectionOutcome {
        features: table.names().to_vec(),
        accuracy,
        selected,
        weights,
        threshold,
    })
}
