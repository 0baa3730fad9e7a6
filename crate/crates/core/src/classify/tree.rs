//! CART classifier with Gini impurity.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::table::fmt_f64;
use crate::datamodel::FeatureTable;
use crate::error::{Error, Result};

const MAGIC: &str = "eegrisk-tree v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Recorded with the model. Split ties are resolved by feature priority,
    /// so the seed does not change the fitted tree.
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_leaf: 2,
            seed: 0,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::Parameter("max_depth must be >= 1".into()));
        }
        if self.min_leaf < 1 {
            return Err(Error::Parameter("min_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        counts: Vec<usize>,
    },
    Leaf {
        counts: Vec<usize>,
    },
}

impl Node {
    pub fn counts(&self) -> &[usize] {
        match self {
            Node::Split { counts, .. } | Node::Leaf { counts } => counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub features: Vec<String>,
    pub n_classes: usize,
    pub params: TreeParams,
    /// Node 0 is the root; children always have larger ids than parents.
    pub nodes: Vec<Node>,
    /// Normalized Gini importance per feature (all zero for a single leaf).
    pub importances: Vec<f64>,
}

/// `sum_children (n_c - sum_k c_k^2 / n_c)`: the count-weighted Gini
/// impurity. Equal partitions give bit-identical values, so equal-gain ties
/// are exact.
fn weighted_gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let sq: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
    n as f64 - sq / n as f64
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

struct Builder<'a> {
    columns: &'a [&'a [f64]],
    labels: &'a [usize],
    n_classes: usize,
    params: TreeParams,
    priority: &'a [usize],
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &r in rows {
            c[self.labels[r]] += 1;
        }
        c
    }

    fn best_split(&self, rows: &[usize], counts: &[usize]) -> Option<Candidate> {
        let n = rows.len();
        let min_leaf = self.params.min_leaf;
        let mut best: Option<Candidate> = None;
        let mut order = rows.to_vec();
        for &f in self.priority {
            let col = self.columns[f];
            order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            let mut left = vec![0; self.n_classes];
            for i in 0..n - 1 {
                left[self.labels[order[i]]] += 1;
                let (a, b) = (col[order[i]], col[order[i + 1]]);
                if a == b || i + 1 < min_leaf || n - i - 1 < min_leaf {
                    continue;
                }
                let right: Vec<usize> = counts.iter().zip(&left).map(|(t, l)| t - l).collect();
                let score = weighted_gini(&left) + weighted_gini(&right);
                if best.as_ref().is_none_or(|c| score < c.score) {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&rows);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            counts: counts.clone(),
        });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf {
            return id;
        }
        let Some(split) = self.best_split(&rows, &counts) else {
            return id;
        };
        let col = self.columns[split.feature];
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| col[i] <= split.threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            counts,
        };
        id
    }
}

/// Trains on column slices (one per feature) and class indices.
///
/// `priority` lists every feature once; among splits with equal impurity
/// decrease the earlier feature wins, then the lower threshold.
pub fn fit(
    features: Vec<String>,
    columns: &[&[f64]],
    labels: &[usize],
    params: TreeParams,
    priority: &[usize],
) -> Result<TreeModel> {
    params.validate()?;
    if columns.len() != features.len() {
        return Err(Error::Parameter(
            "one column per feature name required".into(),
        ));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("no training rows".into()));
    }
    if let Some(c) = columns.iter().find(|c| c.len() != labels.len()) {
        return Err(Error::Validation(format!(
            "column has {} rows, labels have {}",
            c.len(),
            labels.len()
        )));
    }
    let mut seen = vec![false; columns.len()];
    for &p in priority {
        if p >= columns.len() || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Parameter(
                "priority must be a permutation of feature indices".into(),
            ));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Parameter(
            "priority must be a permutation of feature indices".into(),
        ));
    }
    let n_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let mut b = Builder {
        columns,
        labels,
        n_classes,
        params,
        priority,
        nodes: Vec::new(),
    };
    b.grow((0..labels.len()).collect(), 0);
    let nodes = b.nodes;
    if nodes.len() == 1 {
        log::warn!("training labels contain a single class; fitted a one-leaf tree");
    }
    let importances = importances(&nodes, features.len());
    Ok(TreeModel {
        features,
        n_classes,
        params,
        nodes,
        importances,
    })
}

fn importances(nodes: &[Node], n_features: usize) -> Vec<f64> {
    let mut imp = vec![0.0; n_features];
    let mut splits = vec![0usize; n_features];
    for node in nodes {
        if let Node::Split {
            feature,
            left,
            right,
            counts,
            ..
        } = node
        {
            let gain = weighted_gini(counts)
                - weighted_gini(nodes[*left].counts())
                - weighted_gini(nodes[*right].counts());
            imp[*feature] += gain.max(0.0);
            splits[*feature] += 1;
        }
    }
    let total: f64 = imp.iter().sum();
    if total > 0.0 {
        imp.iter_mut().for_each(|v| *v /= total);
    } else {
        let n: usize = splits.iter().sum();
        if n > 0 {
            for (v, s) in imp.iter_mut().zip(&splits) {
                *v = *s as f64 / n as f64;
            }
        }
    }
    imp
}

/// Trains on every feature of `table`; ties go to the lower column index.
pub fn train_tree(table: &FeatureTable, labels: &[usize], params: TreeParams) -> Result<TreeModel> {
    let priority: Vec<usize> = (0..table.n_features()).collect();
    train_tree_with_priority(table, labels, params, &priority)
}

pub fn train_tree_with_priority(
    table: &FeatureTable,
    labels: &[usize],
    params: TreeParams,
    priority: &[usize],
) -> Result<TreeModel> {
    let columns: Vec<&[f64]> = table.columns().iter().map(Vec::as_slice).collect();
    fit(table.names().to_vec(), &columns, labels, params, priority)
}

impl TreeModel {
    fn leaf(&self, x: &[f64]) -> &[usize] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    id = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    /// `x` is indexed like [`TreeModel::features`].
    pub fn predict(&self, x: &[f64]) -> usize {
        majority(self.leaf(x))
    }

    /// Laplace-smoothed leaf frequency `(c + 1) / (n + K)` of `class`.
    pub fn probability(&self, x: &[f64], class: usize) -> f64 {
        let counts = self.leaf(x);
        let n: usize = counts.iter().sum();
        (counts.get(class).copied().unwrap_or(0) + 1) as f64 / (n + self.n_classes) as f64
    }

    /// Rows of `table` re-indexed into model feature order.
    pub fn design(&self, table: &FeatureTable) -> Result<Vec<Vec<f64>>> {
        let idx: Vec<usize> = self
            .features
            .iter()
            .map(|f| {
                table
                    .feature_index(f)
                    .ok_or_else(|| Error::MissingColumn(f.clone()))
            })
            .collect::<Result<_>>()?;
        Ok((0..table.n_rows())
            .map(|r| idx.iter().map(|&j| table.column(j)[r]).collect())
            .collect())
    }

    pub fn predict_table(&self, table: &FeatureTable) -> Result<Vec<usize>> {
        Ok(self
            .design(table)?
            .iter()
            .map(|x| self.predict(x))
            .collect())
    }

    pub fn probability_table(&self, table: &FeatureTable, class: usize) -> Result<Vec<f64>> {
        Ok(self
            .design(table)?
            .iter()
            .map(|x| self.probability(x, class))
            .collect())
    }

    pub fn n_splits(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Split { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Versioned text form, one node per line:
    /// `id kind feature threshold left right counts`, with `-` for the
    /// fields a leaf does not have and counts comma-separated.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "classes {}", self.n_classes);
        let _ = writeln!(s, "max_depth {}", self.params.max_depth);
        let _ = writeln!(s, "min_leaf {}", self.params.min_leaf);
        let _ = writeln!(s, "seed {}", self.params.seed);
        let _ = writeln!(s, "features {}", self.features.len());
        for (i, f) in self.features.iter().enumerate() {
            let _ = writeln!(s, "feature {i} {f}");
        }
        let _ = writeln!(s, "nodes {}", self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let counts = node
                .counts()
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",");
            match node {
                Node::Leaf { .. } => {
                    let _ = writeln!(s, "{id} leaf - - - - {counts}");
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    let _ = writeln!(
                        s,
                        "{id} split {feature} {} {left} {right} {counts}",
                        fmt_f64(*threshold)
                    );
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<TreeModel> {
        let bad = |m: String| Error::Schema(format!("tree model: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad(format!("expected header `{MAGIC}`")));
        }
        let mut header = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("missing `{key}`")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected `{key}`, found `{line}`")))
        };
        let num = |s: String| -> Result<usize> {
            s.parse().map_err(|_| bad(format!("bad integer `{s}`")))
        };
        let n_classes = num(header("classes")?)?;
        let max_depth = num(header("max_depth")?)?;
        let min_leaf = num(header("min_leaf")?)?;
        let seed: u64 = header("seed")?
            .parse()
            .map_err(|_| bad("bad seed".into()))?;
        let n_features = num(header("features")?)?;
        let mut features = Vec::with_capacity(n_features);
        for i in 0..n_features {
            let rest = header("feature")?;
            let (idx, name) = rest
                .split_once(' ')
                .ok_or_else(|| bad(format!("bad feature line `{rest}`")))?;
            if num(idx.to_string())? != i {
                return Err(bad(format!("feature {i} out of order")));
            }
            features.push(name.to_string());
        }
        let n_nodes = num(header("nodes")?)?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for id in 0..n_nodes {
            let line = lines
                .next()
                .ok_or_else(|| bad("truncated node list".into()))?;
            let f: Vec<&str> = line.split(' ').collect();
            if f.len() != 7 || num(f[0].to_string())? != id {
                return Err(bad(format!("bad node line `{line}`")));
            }
            let counts: Vec<usize> = f[6]
                .split(',')
                .map(|c| num(c.to_string()))
                .collect::<Result<_>>()?;
            if counts.len() != n_classes {
                return Err(bad(format!("node {id} has {} counts", counts.len())));
            }
            let node = match f[1] {
                "leaf" => Node::Leaf { counts },
                "split" => {
                    let feature = num(f[2].to_string())?;
                    let threshold: f64 = f[3]
                        .parse()
                        .map_err(|_| bad(format!("bad threshold `{}`", f[3])))?;
                    let (left, right) = (num(f[4].to_string())?, num(f[5].to_string())?);
                    if feature >= n_features
                        || left <= id
                        || right <= id
                        || left >= n_nodes
                        || right >= n_nodes
                    {
                        return Err(bad(format!("node {id} references out of range")));
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                        counts,
                    }
                }
                other => return Err(bad(format!("unknown node kind `{other}`"))),
            };
            nodes.push(node);
        }
        if nodes.is_empty() {
            return Err(bad("no nodes".into()));
        }
        let params = TreeParams {
            max_depth,
            min_leaf,
            seed,
        };
        let importances = importances(&nodes, features.len());
        Ok(TreeModel {
            features,
            n_classes,
            params,
            nodes,
            importances,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<TreeModel> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// The `k` most important features, ties by feature index.
pub fn top_k_importance(model: &TreeModel, k: usize) -> Vec<String> {
    let n = model.features.len();
    if k > n {
        log::warn!("requested top {k} features but the model has only {n}; returning all");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        model.importances[b]
            .total_cmp(&model.importances[a])
            .then(a.cmp(&b))
    });
    order
        .into_iter()
        .take(k)
        .map(|i| model.features[i].clone())
        .collect()
}
