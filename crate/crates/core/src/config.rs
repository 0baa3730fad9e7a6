//! Pipeline configuration.
//!
//! TOML with section prefixes, e.g. `welch.seg_seconds = 4.0` or a
//! `[welch]` table. Unknown keys are rejected. Overrides given as
//! `key.path = value` pairs (the `--set` flag) are applied on top of the
//! file before validation; dedicated command-line flags are applied last.

use serde::{Deserialize, Serialize};

use crate::classify::ClassifyConfig;
use crate::datamodel::{Band, BandScheme, Group};
use crate::dsp::WelchParams;
use crate::error::{Error, Result};
use crate::evaluate::default_sizes;
use crate::features::{Extractor, SlSettings};
use crate::harmonize::{CombatOptions, Covariate};
use crate::psm::{MatchOptions, Strategy};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Feature table CSV.
    pub features: Option<String>,
    /// Directory of epoch manifests (`*.txt`), processed in file-name order.
    pub epochs: Option<String>,
    /// `"default"` or a cohort spec TOML file.
    pub synth: Option<String>,
    pub allow_missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub harmonize: bool,
    #[serde(rename = "match")]
    pub matching: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            harmonize: true,
            matching: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarmonizeConfig {
    pub preserve_group: bool,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for HarmonizeConfig {
    fn default() -> Self {
        let o = CombatOptions::default();
        Self {
            preserve_group: false,
            tol: o.tol,
            max_iter: o.max_iter,
        }
    }
}

impl HarmonizeConfig {
    pub fn covariates(&self) -> Vec<Covariate> {
        Covariate::defaults(self.preserve_group)
    }

    pub fn options(&self) -> CombatOptions {
        CombatOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub strategy: Strategy,
    pub caliper: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        let o = MatchOptions::default();
        Self {
            strategy: o.strategy,
            caliper: o.caliper,
        }
    }
}

impl MatchConfig {
    pub fn options(&self, ratio: usize) -> MatchOptions {
        MatchOptions {
            ratio,
            strategy: self.strategy,
            caliper: self.caliper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub test_fraction: f64,
    pub folds: usize,
    pub curve_sizes: Vec<f64>,
    pub positive_class: Group,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            folds: 10,
            curve_sizes: default_sizes(),
            positive_class: Group::HC,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Not part of the resolved config written with the results.
    #[serde(skip_serializing)]
    pub out_dir: Option<String>,
    pub ratios: Vec<usize>,
    pub input: InputConfig,
    pub stages: Stages,
    /// `name:lo-hi` entries in ascending order.
    pub bands: Vec<String>,
    pub welch: WelchParams,
    pub sl: SlSettings,
    pub harmonize: HarmonizeConfig,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    pub classify: ClassifyConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: None,
            ratios: vec![2, 5, 10],
            input: InputConfig {
                synth: Some("default".into()),
                ..InputConfig::default()
            },
            stages: Stages::default(),
            bands: BandScheme::default()
                .bands()
                .iter()
                .map(Band::to_string)
                .collect(),
            welch: WelchParams::default(),
            sl: SlSettings::default(),
            harmonize: HarmonizeConfig::default(),
            matching: MatchConfig::default(),
            classify: ClassifyConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Config(format!("empty key in `{key}`")))?;
    let mut t = table;
    for p in parts {
        t = t
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

/// Parses a right-hand side as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl PipelineConfig {
    /// Parses `text`, applies `key=value` overrides, validates.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<PipelineConfig> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` must be key=value")))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: PipelineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        Self::from_toml_with(text, &[])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn band_scheme(&self) -> Result<BandScheme> {
        let bands = self
            .bands
            .iter()
            .map(|b| b.parse::<Band>())
            .collect::<Result<Vec<_>>>()?;
        BandScheme::new(bands).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn extractor(&self) -> Result<Extractor> {
        Ok(Extractor {
            bands: self.band_scheme()?,
            welch: self.welch,
            sl: self.sl.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let n_inputs = [&self.input.features, &self.input.epochs, &self.input.synth]
            .iter()
            .filter(|x| x.is_some())
            .count();
        if n_inputs != 1 {
            return bad("exactly one of input.features, input.epochs, input.synth must be set");
        }
        if self.stages.matching && (self.ratios.is_empty() || self.ratios.contains(&0)) {
            return bad("ratios must be a nonempty list of integers >= 1");
        }
        self.band_scheme()?;
        if !(self.welch.seg_seconds > 0.0) || !(0.0..1.0).contains(&self.welch.overlap) {
            return bad("welch.seg_seconds must be > 0 and welch.overlap in [0, 1)");
        }
        if !(self.sl.p_ref > 0.0 && self.sl.p_ref < 0.5) {
            return bad("sl.p_ref must be in (0, 0.5)");
        }
        for (band, p) in &self.sl.overrides {
            p.validate()
                .map_err(|e| Error::Config(format!("sl.overrides.{band}: {e}")))?;
        }
        if !(self.harmonize.tol > 0.0) || self.harmonize.max_iter == 0 {
            return bad("harmonize.tol must be > 0 and harmonize.max_iter >= 1");
        }
        if !(self.matching.caliper > 0.0) {
            return bad("match.caliper must be > 0");
        }
        self.classify
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let ev = &self.evaluate;
        if !(ev.test_fraction > 0.0 && ev.test_fraction < 1.0) {
            return bad("evaluate.test_fraction must be in (0, 1)");
        }
        if ev.folds < 2 {
            return bad("evaluate.folds must be >= 2");
        }
        if ev.curve_sizes.is_empty()
            || ev.curve_sizes.iter().any(|&s| !(s > 0.0 && s <= 1.0))
            || ev.curve_sizes.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("evaluate.curve_sizes must be ascending values in (0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn dotted_keys_and_overrides() {
        let c = PipelineConfig::from_toml_with(
            "welch.seg_seconds = 2.0\nclassify.tree.max_depth = 5\n",
            &[
                "harmonize.preserve_group=true".into(),
                "match.strategy=nn".into(),
                "ratios=[3]".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.welch.seg_seconds, 2.0);
        assert_eq!(c.classify.tree.max_depth, 5);
        assert!(c.harmonize.preserve_group);
        assert_eq!(c.matching.strategy, Strategy::Nn);
        assert_eq!(c.ratios, vec![3]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            PipelineConfig::from_toml("colour = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml("welch.window = 'hann'"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ranges_checked() {
        assert!(matches!(
            PipelineConfig::from_toml("ratios = [0]"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml("input.features = 'x.csv'\ninput.synth = 'default'"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml("classify.corr_threshold = 1.5"),
            Err(Error::Config(_))
        ));
    }
}
