//! Feature pruning, decision trees, greedy selection and effect sizes.
//!
//! [`fit_classifier`] runs the full sequence on a training table:
//! correlation pruning, a preliminary tree on every surviving feature, the
//! `top_k` features by importance, single-feature selection against the
//! accuracy threshold, and a final tree on the selected features.

pub mod effect;
pub mod prune;
pub mod select;
pub mod tree;

use serde::{Deserialize, Serialize};

pub use effect::{cohens_d, effect_sizes, EffectSize, Magnitude};
pub use prune::{correlation_prune, Dropped, PruneOutcome, PruneReason};
pub use select::{greedy_feature_select, EvalProtocol, SelectionOutcome};
pub use tree::{
    top_k_importance, train_tree, train_tree_with_priority, Node, TreeModel, TreeParams,
};

use crate::datamodel::FeatureTable;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub corr_threshold: f64,
    pub top_k: usize,
    pub accuracy_threshold: f64,
    pub eval: EvalProtocol,
    pub tree: TreeParams,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            corr_threshold: 0.95,
            top_k: 100,
            accuracy_threshold: 0.6,
            eval: EvalProtocol::default(),
            tree: TreeParams::default(),
        }
    }
}

impl ClassifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.corr_threshold > 0.0 && self.corr_threshold <= 1.0) {
            return Err(Error::Parameter(
                "classify.corr_threshold must be in (0, 1]".into(),
            ));
        }
        if self.top_k == 0 {
            return Err(Error::Parameter("classify.top_k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.accuracy_threshold) {
            return Err(Error::Parameter(
                "classify.accuracy_threshold must be in [0, 1]".into(),
            ));
        }
        if self.eval.folds < 2 {
            return Err(Error::Parameter("classify.eval.folds must be >= 2".into()));
        }
        self.tree.validate()?;
        TreeParams {
            max_depth: self.eval.max_depth,
            min_leaf: self.eval.min_leaf,
            seed: 0,
        }
        .validate()
    }
}

/// Everything up to, but not including, the final tree.
#[derive(Debug, Clone)]
pub struct SelectionFit {
    pub prune: PruneOutcome,
    pub preliminary: TreeModel,
    /// Top features by preliminary importance, in pruned-table column order.
    pub candidates: Vec<String>,
    pub selection: SelectionOutcome,
}

#[derive(Debug, Clone)]
pub struct ClassifierFit {
    pub fit: SelectionFit,
    pub model: TreeModel,
}

pub fn fit_selection(
    train: &FeatureTable,
    cfg: &ClassifyConfig,
    seed: u64,
) -> Result<SelectionFit> {
    cfg.validate()?;
    let labels = train.labels();
    let tree = TreeParams { seed, ..cfg.tree };
    let prune = correlation_prune(train, cfg.corr_threshold)?;
    let preliminary = train_tree(&prune.table, &labels, tree)?;
    let top = top_k_importance(&preliminary, cfg.top_k);
    let candidates: Vec<String> = prune
        .table
        .names()
        .iter()
        .filter(|n| top.contains(n))
        .cloned()
        .collect();
    let cand_table = prune.table.select_features_by_name(&candidates)?;
    let selection = greedy_feature_select(
        &cand_table,
        &labels,
        cfg.accuracy_threshold,
        cfg.eval,
        derive_seed(seed, 1),
    )?;
    log::info!(
        "selection: {} after pruning, {} candidates, {} selected",
        prune.table.n_features(),
        candidates.len(),
        selection.selected.len()
    );
    Ok(SelectionFit {
        prune,
        preliminary,
        candidates,
        selection,
    })
}

/// Final tree on the selected features, ties broken by selection weight.
pub fn train_selected(
    train: &FeatureTable,
    selection: &SelectionOutcome,
    params: TreeParams,
) -> Result<TreeModel> {
    let table = train.select_features_by_name(&selection.selected_names())?;
    train_tree_with_priority(&table, &train.labels(), params, &selection.priority())
}

pub fn fit_classifier(
    train: &FeatureTable,
    cfg: &ClassifyConfig,
    seed: u64,
) -> Result<ClassifierFit> {
    let fit = fit_selection(train, cfg, seed)?;
    let model = train_selected(train, &fit.selection, TreeParams { seed, ..cfg.tree })?;
    log::info!("final tree depth {}", model.depth());
    Ok(ClassifierFit { fit, model })
}
