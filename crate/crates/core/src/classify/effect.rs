//! Cohen's d with pooled standard deviation.

use crate::datamodel::{FeatureTable, Group};
use crate::error::{Error, Result};
use crate::stats::{mean, sample_var};

/// `(mean_a - mean_b) / pooled_sd`. In the pipeline `a` is ACr and `b` HC.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Parameter(
            "each group needs at least two values".into(),
        ));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = ((na - 1.0) * sample_var(a) + (nb - 1.0) * sample_var(b)) / (na + nb - 2.0);
    if !(pooled > 0.0) {
        return Err(Error::UndefinedEffect);
    }
    Ok((mean(a) - mean(b)) / pooled.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Magnitude {
    Negligible,
    Small,
    Medium,
    Large,
    VeryLarge,
}

impl Magnitude {
    /// Cut points 0.2, 0.5, 0.8 and 1.2 on `|d|`.
    pub fn of(d: f64) -> Magnitude {
        match d.abs() {
            x if x >= 1.2 => Magnitude::VeryLarge,
            x if x >= 0.8 => Magnitude::Large,
            x if x >= 0.5 => Magnitude::Medium,
            x if x >= 0.2 => Magnitude::Small,
            _ => Magnitude::Negligible,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Magnitude::Negligible => "negligible",
            Magnitude::Small => "small",
            Magnitude::Medium => "medium",
            Magnitude::Large => "large",
            Magnitude::VeryLarge => "very large",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectSize {
    pub feature: String,
    /// `None` when the pooled SD is zero.
    pub d: Option<f64>,
}

/// ACr versus HC for each named feature.
pub fn effect_sizes(table: &FeatureTable, features: &[String]) -> Result<Vec<EffectSize>> {
    let acr = table.group_rows(Group::ACr);
    let hc = table.group_rows(Group::HC);
    features
        .iter()
        .map(|f| {
            let col = table
                .column_by_name(f)
                .ok_or_else(|| Error::MissingColumn(f.clone()))?;
            let a: Vec<f64> = acr.iter().map(|&r| col[r]).collect();
            let b: Vec<f64> = hc.iter().map(|&r| col[r]).collect();
            let d = match cohens_d(&a, &b) {
                Ok(d) => Some(d),
                Err(Error::UndefinedEffect) => None,
                Err(e) => return Err(e),
            };
            Ok(EffectSize {
                feature: f.clone(),
                d,
            })
        })
        .collect()
}
