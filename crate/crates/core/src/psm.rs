//! Propensity scores, common support, ratio trimming and balance
//! diagnostics.
//!
//! The treated group is ACr; the propensity is `P(ACr | age, sex)`.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::datamodel::table::fmt_f64;
use crate::datamodel::{FeatureTable, Group, RecordMeta};
use crate::error::{Error, Result};
use crate::stats::{mean, sample_sd, smd};

const RIDGE: f64 = 1e-6;
const TOL: f64 = 1e-8;
const MAX_ITER: usize = 50;
const SEPARATION: f64 = 15.0;

/// Logistic model on standardized age and sex.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    /// `[intercept, age, sex]` in standardized units.
    pub coef: [f64; 3],
    pub age_mean: f64,
    pub age_sd: f64,
    pub sex_mean: f64,
    /// Zero when every record has the same sex; the sex term is then fixed at 0.
    pub sex_sd: f64,
    pub iterations: usize,
    pub log_likelihood: f64,
}

impl PropensityModel {
    /// `[intercept, per year of age, male vs female]` on the raw scale.
    pub fn raw_coefficients(&self) -> [f64; 3] {
        let a = self.coef[1] / self.age_sd;
        let s = if self.sex_sd > 0.0 {
            self.coef[2] / self.sex_sd
        } else {
            0.0
        };
        [self.coef[0] - a * self.age_mean - s * self.sex_mean, a, s]
    }

    fn features(&self, r: &RecordMeta) -> [f64; 3] {
        let sex = if self.sex_sd > 0.0 {
            (r.sex.code() - self.sex_mean) / self.sex_sd
        } else {
            0.0
        };
        [1.0, (r.age - self.age_mean) / self.age_sd, sex]
    }

    pub fn logit(&self, r: &RecordMeta) -> f64 {
        let x = self.features(r);
        x.iter().zip(&self.coef).map(|(a, b)| a * b).sum()
    }

    pub fn score(&self, r: &RecordMeta) -> f64 {
        sigmoid(self.logit(r))
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Maximum-likelihood fit by iteratively reweighted least squares.
pub fn fit_propensity(records: &[RecordMeta]) -> Result<PropensityModel> {
    let n = records.len();
    let n_treated = records.iter().filter(|r| r.group == Group::ACr).count();
    if n < 10 {
        log::warn!("propensity model fitted on only {n} records");
    }
    if n_treated == 0 || n_treated == n {
        return Err(Error::Validation(
            "propensity model needs both HC and ACr records".into(),
        ));
    }
    let ages: Vec<f64> = records.iter().map(|r| r.age).collect();
    let sexes: Vec<f64> = records.iter().map(|r| r.sex.code()).collect();
    let age_sd = sample_sd(&ages);
    let sex_sd = sample_sd(&sexes);
    let mut model = PropensityModel {
        coef: [0.0; 3],
        age_mean: mean(&ages),
        age_sd: if age_sd > 0.0 { age_sd } else { 1.0 },
        sex_mean: mean(&sexes),
        sex_sd: if sex_sd > 0.0 { sex_sd } else { 0.0 },
        iterations: 0,
        log_likelihood: f64::NEG_INFINITY,
    };
    let xs: Vec<[f64; 3]> = records.iter().map(|r| model.features(r)).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.group.index() as f64).collect();

    let log_lik = |b: &Vector3<f64>| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(x, &y)| {
                let t = x[0] * b[0] + x[1] * b[1] + x[2] * b[2];
                y * t - softplus(t)
            })
            .sum()
    };

    let mut beta = Vector3::zeros();
    let mut ll = log_lik(&beta);
    let mut trace = vec![ll];
    for it in 1..=MAX_ITER {
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for (x, &y) in xs.iter().zip(&ys) {
            let xv = Vector3::new(x[0], x[1], x[2]);
            let p = sigmoid(xv.dot(&beta));
            g += xv * (y - p);
            h += xv * xv.transpose() * (p * (1.0 - p));
        }
        for k in 1..3 {
            h[(k, k)] += RIDGE;
            g[k] -= RIDGE * beta[k];
        }
        let step = h
            .lu()
            .solve(&g)
            .ok_or_else(|| Error::Numeric("singular propensity information matrix".into()))?;
        beta += step;
        if let Some(m) = beta
            .iter()
            .map(|b| b.abs())
            .reduce(f64::max)
            .filter(|&m| m > SEPARATION)
        {
            return Err(Error::Separation { magnitude: m });
        }
        let next = log_lik(&beta);
        trace.push(next);
        let change = (next - ll).abs();
        ll = next;
        if change < TOL {
            model.coef = [beta[0], beta[1], beta[2]];
            model.iterations = it;
            model.log_likelihood = ll;
            return Ok(model);
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITER,
        trace,
    })
}

/// Overlap interval of the two groups' score ranges.
pub fn common_support(scores: &[f64], groups: &[Group]) -> Result<(f64, f64)> {
    let range = |g: Group| {
        scores
            .iter()
            .zip(groups)
            .filter(|(_, &x)| x == g)
            .map(|(&s, _)| s)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s), hi.max(s))
            })
    };
    let (tlo, thi) = range(Group::ACr);
    let (clo, chi) = range(Group::HC);
    if !tlo.is_finite() || !clo.is_finite() {
        return Err(Error::Validation(
            "common support needs records from both groups".into(),
        ));
    }
    let (lo, hi) = (tlo.max(clo), thi.min(chi));
    if lo > hi {
        return Err(Error::NoSupport {
            treated_lo: tlo,
            treated_hi: thi,
            control_lo: clo,
            control_hi: chi,
        });
    }
    Ok((lo, hi))
}

/// Indices of the treated records to keep at `ratio` controls per treated:
/// the `floor(n_control / ratio)` highest scores, ties by subject id.
/// `candidates` lists the indices still eligible.
pub fn trim_to_ratio(
    records: &[RecordMeta],
    scores: &[f64],
    candidates: &[usize],
    ratio: usize,
) -> Result<Vec<usize>> {
    if ratio < 1 {
        return Err(Error::Parameter("ratio must be at least 1".into()));
    }
    let n_control = candidates
        .iter()
        .filter(|&&i| records[i].group == Group::HC)
        .count();
    let target = n_control / ratio;
    if target == 0 {
        return Err(Error::Parameter(format!(
            "ratio {ratio}:1 leaves no treated records with only {n_control} controls"
        )));
    }
    let mut treated: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&i| records[i].group == Group::ACr)
        .collect();
    treated.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| records[a].subject_id.cmp(&records[b].subject_id))
    });
    treated.truncate(target);
    treated.sort_unstable();
    Ok(treated)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Drop the lowest-score treated records until the ratio is met.
    #[default]
    Trim,
    /// Greedy k:1 nearest-neighbour pairing on the logit with a caliper.
    Nn,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trim" => Ok(Strategy::Trim),
            "nn" => Ok(Strategy::Nn),
            other => Err(Error::Config(format!(
                "matching strategy must be `trim` or `nn`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOptions {
    pub ratio: usize,
    pub strategy: Strategy,
    /// Caliper in SDs of the logit (nn strategy only).
    pub caliper: f64,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            ratio: 2,
            strategy: Strategy::Trim,
            caliper: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    OutsideSupport,
    Ratio,
    Unmatched,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::OutsideSupport => "outside_support",
            DropReason::Ratio => "ratio",
            DropReason::Unmatched => "unmatched",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateBalance {
    pub covariate: &'static str,
    pub before: f64,
    pub before_degenerate: bool,
    pub after: f64,
    pub after_degenerate: bool,
}

/// Score counts in 20 equal bins over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistogram {
    pub edges: Vec<f64>,
    /// `counts[group index][bin]`.
    pub before: [Vec<usize>; 2],
    pub after: [Vec<usize>; 2],
}

pub const HIST_BINS: usize = 20;

fn histogram(scores: &[f64], groups: &[Group], keep: impl Fn(usize) -> bool) -> [Vec<usize>; 2] {
    let mut out = [vec![0; HIST_BINS], vec![0; HIST_BINS]];
    for (i, (&s, g)) in scores.iter().zip(groups).enumerate() {
        if keep(i) {
            let b = ((s * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            out[g.index()][b] += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub ids: Vec<String>,
    pub groups: Vec<Group>,
    pub scores: Vec<f64>,
    pub support: (f64, f64),
    /// `None` when kept.
    pub dropped: Vec<Option<DropReason>>,
    pub requested_ratio: usize,
    pub achieved_ratio: f64,
    pub model: PropensityModel,
    pub balance: Vec<CovariateBalance>,
    pub histogram: ScoreHistogram,
}

impl MatchResult {
    pub fn kept_rows(&self) -> Vec<usize> {
        (0..self.ids.len())
            .filter(|&i| self.dropped[i].is_none())
            .collect()
    }

    pub fn kept_ids(&self, group: Group) -> Vec<&str> {
        self.kept_rows()
            .into_iter()
            .filter(|&i| self.groups[i] == group)
            .map(|i| self.ids[i].as_str())
            .collect()
    }

    pub fn dropped_ids(&self, group: Group) -> Vec<&str> {
        (0..self.ids.len())
            .filter(|&i| self.dropped[i].is_some() && self.groups[i] == group)
            .map(|i| self.ids[i].as_str())
            .collect()
    }

    pub fn n_kept(&self, group: Group) -> usize {
        self.kept_ids(group).len()
    }

    /// The kept rows of `table` in their original order.
    pub fn apply(&self, table: &FeatureTable) -> Result<FeatureTable> {
        if table.n_rows() != self.ids.len()
            || table
                .records()
                .iter()
                .zip(&self.ids)
                .any(|(r, id)| r.subject_id != *id)
        {
            return Err(Error::Schema(
                "table rows do not match the matched cohort".into(),
            ));
        }
        Ok(table.select_rows(&self.kept_rows()))
    }

    /// `subject_id,group,score,kept,reason`.
    pub fn scores_csv(&self) -> String {
        let mut s = String::from("subject_id,group,score,kept,reason\n");
        for i in 0..self.ids.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                self.ids[i],
                self.groups[i],
                fmt_f64(self.scores[i]),
                self.dropped[i].is_none(),
                self.dropped[i].map_or("", DropReason::as_str)
            );
        }
        s
    }

    /// Balance table plus cohort summary lines.
    pub fn balance_csv(&self) -> String {
        let mut s =
            String::from("covariate,smd_before,degenerate_before,smd_after,degenerate_after\n");
        for b in &self.balance {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                b.covariate,
                fmt_f64(b.before),
                b.before_degenerate,
                fmt_f64(b.after),
                b.after_degenerate
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let raw = self.model.raw_coefficients();
        let mut s = String::from("key,value\n");
        let rows: [(&str, String); 11] = [
            ("requested_ratio", self.requested_ratio.to_string()),
            ("achieved_ratio", fmt_f64(self.achieved_ratio)),
            ("support_lo", fmt_f64(self.support.0)),
            ("support_hi", fmt_f64(self.support.1)),
            ("kept_acr", self.n_kept(Group::ACr).to_string()),
            ("kept_hc", self.n_kept(Group::HC).to_string()),
            ("coef_intercept", fmt_f64(raw[0])),
            ("coef_age", fmt_f64(raw[1])),
            ("coef_sex_m", fmt_f64(raw[2])),
            ("iterations", self.model.iterations.to_string()),
            ("log_likelihood", fmt_f64(self.model.log_likelihood)),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }

    /// `bin_lo,bin_hi,hc_before,acr_before,hc_after,acr_after`.
    pub fn histogram_csv(&self) -> String {
        let h = &self.histogram;
        let mut s = String::from("bin_lo,bin_hi,hc_before,acr_before,hc_after,acr_after\n");
        for b in 0..HIST_BINS {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                fmt_f64(h.edges[b]),
                fmt_f64(h.edges[b + 1]),
                h.before[0][b],
                h.before[1][b],
                h.after[0][b],
                h.after[1][b]
            );
        }
        s
    }
}

/// SMD of age and sex between groups, restricted to `rows`.
pub fn balance(records: &[RecordMeta], rows: &[usize]) -> Vec<(&'static str, f64, bool)> {
    let pick = |g: Group, f: &dyn Fn(&RecordMeta) -> f64| -> Vec<f64> {
        rows.iter()
            .map(|&i| &records[i])
            .filter(|r| r.group == g)
            .map(f)
            .collect()
    };
    let age = |r: &RecordMeta| r.age;
    let sex = |r: &RecordMeta| r.sex.code();
    let (a, ad) = smd(&pick(Group::ACr, &age), &pick(Group::HC, &age));
    let (s, sd) = smd(&pick(Group::ACr, &sex), &pick(Group::HC, &sex));
    vec![("age", a, ad), ("sex", s, sd)]
}

/// Greedy nearest-neighbour matching: treated in descending score order
/// (ties by id) each take the `k` closest unused controls within the
/// caliper; treated that cannot find `k` are dropped.
fn nn_match(
    records: &[RecordMeta],
    logits: &[f64],
    candidates: &[usize],
    k: usize,
    caliper: f64,
) -> Vec<usize> {
    let mut treated: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&i| records[i].group == Group::ACr)
        .collect();
    treated.sort_by(|&a, &b| {
        logits[b]
            .total_cmp(&logits[a])
            .then_with(|| records[a].subject_id.cmp(&records[b].subject_id))
    });
    let mut free: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&i| records[i].group == Group::HC)
        .collect();
    let mut kept = Vec::new();
    for t in treated {
        let mut near: Vec<(f64, usize)> = free
            .iter()
            .map(|&c| ((logits[c] - logits[t]).abs(), c))
            .filter(|(d, _)| *d <= caliper)
            .collect();
        if near.len() < k {
            continue;
        }
        near.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| records[a.1].subject_id.cmp(&records[b.1].subject_id))
        });
        let chosen: Vec<usize> = near[..k].iter().map(|x| x.1).collect();
        free.retain(|c| !chosen.contains(c));
        kept.push(t);
        kept.extend(chosen);
    }
    kept.sort_unstable();
    kept
}

/// Fits the propensity model, applies common support and reduces the
/// cohort to the requested ratio.
pub fn match_cohort(records: &[RecordMeta], opts: MatchOptions) -> Result<MatchResult> {
    if opts.ratio < 1 {
        return Err(Error::Parameter("ratio must be at least 1".into()));
    }
    let model = fit_propensity(records)?;
    let scores: Vec<f64> = records.iter().map(|r| model.score(r)).collect();
    let groups: Vec<Group> = records.iter().map(|r| r.group).collect();
    let support = common_support(&scores, &groups)?;
    let mut dropped: Vec<Option<DropReason>> = scores
        .iter()
        .map(|&s| (s < support.0 || s > support.1).then_some(DropReason::OutsideSupport))
        .collect();
    let inside: Vec<usize> = (0..records.len())
        .filter(|&i| dropped[i].is_none())
        .collect();

    match opts.strategy {
        Strategy::Trim => {
            let keep = trim_to_ratio(records, &scores, &inside, opts.ratio)?;
            for &i in &inside {
                if groups[i] == Group::ACr && keep.binary_search(&i).is_err() {
                    dropped[i] = Some(DropReason::Ratio);
                }
            }
        }
        Strategy::Nn => {
            let logits: Vec<f64> = records.iter().map(|r| model.logit(r)).collect();
            let sd = sample_sd(&inside.iter().map(|&i| logits[i]).collect::<Vec<_>>());
            let keep = nn_match(records, &logits, &inside, opts.ratio, opts.caliper * sd);
            for &i in &inside {
                if keep.binary_search(&i).is_err() {
                    dropped[i] = Some(DropReason::Unmatched);
                }
            }
        }
    }

    let kept: Vec<usize> = (0..records.len())
        .filter(|&i| dropped[i].is_none())
        .collect();
    let n_t = kept.iter().filter(|&&i| groups[i] == Group::ACr).count();
    let n_c = kept.len() - n_t;
    if n_t == 0 {
        return Err(Error::EmptyInput(
            "matching kept no treated records; widen the caliper or lower the ratio".into(),
        ));
    }
    let all: Vec<usize> = (0..records.len()).collect();
    let before = balance(records, &all);
    let after = balance(records, &kept);
    let balance = before
        .into_iter()
        .zip(after)
        .map(|(b, a)| CovariateBalance {
            covariate: b.0,
            before: b.1,
            before_degenerate: b.2,
            after: a.1,
            after_degenerate: a.2,
        })
        .collect();
    let histogram = ScoreHistogram {
        edges: (0..=HIST_BINS)
            .map(|b| b as f64 / HIST_BINS as f64)
            .collect(),
        before: histogram(&scores, &groups, |_| true),
        after: histogram(&scores, &groups, |i| dropped[i].is_none()),
    };
    Ok(MatchResult {
        ids: records.iter().map(|r| r.subject_id.clone()).collect(),
        groups,
        scores,
        support,
        dropped,
        requested_ratio: opts.ratio,
        achieved_ratio: n_c as f64 / n_t as f64,
        model,
        balance,
        histogram,
    })
}
