//! Removal of highly correlated features.

use rayon::prelude::*;

use crate::datamodel::FeatureTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum PruneReason {
    Constant,
    /// Dropped from a pair with `partner` at correlation `r`.
    Correlated {
        partner: String,
        r: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dropped {
    pub feature: String,
    pub reason: PruneReason,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub table: FeatureTable,
    /// In drop order.
    pub dropped: Vec<Dropped>,
    pub threshold: f64,
}

/// Centered columns scaled to unit norm, so `r = <u, v>`.
fn unit_columns(table: &FeatureTable, keep: &[usize]) -> Vec<Vec<f64>> {
    keep.par_iter()
        .map(|&j| {
            let c = table.column(j);
            let m = c.iter().sum::<f64>() / c.len() as f64;
            let d: Vec<f64> = c.iter().map(|v| v - m).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            d.into_iter().map(|v| v / norm).collect()
        })
        .collect()
}

/// Absolute Pearson correlations, row-major `n x n`.
pub fn abs_correlations(table: &FeatureTable, features: &[usize]) -> Vec<f64> {
    let u = unit_columns(table, features);
    let n = u.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        1.0
                    } else {
                        let (a, b) = if i < j { (i, j) } else { (j, i) };
                        u[a].iter()
                            .zip(&u[b])
                            .map(|(x, y)| x * y)
                            .sum::<f64>()
                            .abs()
                            .min(1.0)
                    }
                })
                .collect()
        })
        .collect();
    rows.concat()
}

/// Drops constant features, then walks pairs with `|r| > threshold` in
/// descending `|r|` (ties by column pair). Of each pair whose members both
/// survive so far, the one with the larger mean `|r|` to the remaining
/// features goes, the later column on a tie.
///
/// Every surviving pair was visited with both members alive, so no pair
/// above the threshold remains after one pass.
pub fn correlation_prune(table: &FeatureTable, threshold: f64) -> Result<PruneOutcome> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Parameter(format!(
            "correlation threshold must be in (0, 1], got {threshold}"
        )));
    }
    if table.n_features() < 2 {
        return Err(Error::Parameter(
            "correlation pruning needs at least two features".into(),
        ));
    }
    let mut dropped = Vec::new();
    let mut varying = Vec::new();
    for j in 0..table.n_features() {
        let c = table.column(j);
        if c.iter().all(|&v| v == c[0]) {
            log::warn!(
                "feature {} is constant; dropped before correlation pruning",
                table.names()[j]
            );
            dropped.push(Dropped {
                feature: table.names()[j].clone(),
                reason: PruneReason::Constant,
            });
        } else {
            varying.push(j);
        }
    }

    let n = varying.len();
    let r = abs_correlations(table, &varying);
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| r[i * n + j] > threshold)
        .collect();
    pairs.sort_by(|&(a, b), &(c, d)| {
        r[c * n + d]
            .total_cmp(&r[a * n + b])
            .then((a, b).cmp(&(c, d)))
    });

    let mut alive = vec![true; n];
    let mut n_alive = n;
    let mean_abs = |f: usize, alive: &[bool], n_alive: usize| -> f64 {
        let s: f64 = (0..n)
            .filter(|&k| k != f && alive[k])
            .map(|k| r[f * n + k])
            .sum();
        s / (n_alive - 1) as f64
    };
    for (i, j) in pairs {
        if !alive[i] || !alive[j] {
            continue;
        }
        let (mi, mj) = (mean_abs(i, &alive, n_alive), mean_abs(j, &alive, n_alive));
        let (gone, kept) = if mi > mj { (i, j) } else { (j, i) };
        alive[gone] = false;
        n_alive -= 1;
        dropped.push(Dropped {
            feature: table.names()[varying[gone]].clone(),
            reason: PruneReason::Correlated {
                partner: table.names()[varying[kept]].clone(),
                r: r[i * n + j],
            },
        });
    }
    let keep: Vec<usize> = (0..n).filter(|&k| alive[k]).map(|k| varying[k]).collect();
    log::info!(
        "correlation pruning at |r| > {threshold}: kept {} of {} features",
        keep.len(),
        table.n_features()
    );
    Ok(PruneOutcome {
        table: table.select_features(&keep),
        dropped,
        threshold,
    })
}
