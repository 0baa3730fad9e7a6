//! Seeded synthetic cohorts with known site and group effects.
//!
//! Feature values for record `i`, feature `f` at site `s`:
//!
//! ```text
//! y = offset[s][f] + scale[s][f] * noise_sd * (z + d_f * [ACr] + slope_f * (age - age_ref))
//! ```
//!
//! with `z ~ N(0, 1)`. Site offsets and scales are the site's nominal
//! values perturbed per feature by `site_jitter`. Everything, including the
//! per-feature perturbations, is a pure function of the spec and its seed.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::table::fmt_f64;
use crate::datamodel::{EpochSet, FeatureTable, Group, RecordMeta, Sex};
use crate::dsp::bandpass;
use crate::error::{Error, Result};
use crate::features::Extractor;
use crate::rng::{derive_seed, SplitMix64};

/// One (site, group) cell of the cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub site: String,
    pub group: Group,
    pub n: usize,
    pub age_mean: f64,
    pub age_sd: f64,
    /// Exact number of female records in the cell.
    pub female: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteEffect {
    pub site: String,
    /// Additive offset in units of `noise_sd`.
    pub offset: f64,
    /// Multiplicative scale.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEffect {
    pub feature: String,
    /// Target Cohen's d, ACr minus HC.
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeEffect {
    pub feature: String,
    /// Change per year in units of `noise_sd`.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub seed: u64,
    pub n_components: usize,
    /// Feature families to emit, in grammar order.
    pub metrics: Vec<String>,
    pub noise_sd: f64,
    pub site_jitter: f64,
    pub age_ref: f64,
    /// Ages are clamped to this range; with `support_anchors` both groups
    /// also get one record at each (range end, sex) corner, so the
    /// propensity ranges of the two groups coincide.
    pub age_range: [f64; 2],
    pub support_anchors: bool,
    pub cells: Vec<CellSpec>,
    pub sites: Vec<SiteEffect>,
    pub effects: Vec<GroupEffect>,
    pub age_effects: Vec<AgeEffect>,
}

fn cell(site: &str, group: Group, n: usize, age_mean: f64, age_sd: f64, female: usize) -> CellSpec {
    CellSpec {
        site: site.into(),
        group,
        n,
        age_mean,
        age_sd,
        female,
    }
}

fn site(name: &str, offset: f64, scale: f64) -> SiteEffect {
    SiteEffect {
        site: name.into(),
        offset,
        scale,
    }
}

impl Default for CohortSpec {
    /// The 2:1 pool: 158 HC and 79 ACr over four sites.
    fn default() -> Self {
        let effect = |f: &str| GroupEffect {
            feature: f.into(),
            d: 1.0,
        };
        Self {
            seed: 42,
            n_components: 9,
            metrics: ["power", "entropy", "coherence", "sl", "crossfreq"]
                .map(String::from)
                .to_vec(),
            noise_sd: 1.0,
            site_jitter: 0.25,
            age_ref: 32.0,
            age_range: [18.0, 50.0],
            support_anchors: true,
            cells: vec![
                cell("CHBMP", Group::HC, 38, 27.63, 6.67, 13),
                cell("SRM", Group::HC, 31, 30.77, 5.21, 19),
                cell("UdeA1", Group::ACr, 68, 35.81, 4.36, 49),
                cell("UdeA1", Group::HC, 77, 30.45, 4.81, 47),
                cell("UdeA2", Group::ACr, 11, 33.45, 3.64, 9),
                cell("UdeA2", Group::HC, 12, 31.42, 7.15, 10),
            ],
            sites: vec![
                site("CHBMP", 1.5, 1.4),
                site("SRM", -1.0, 0.8),
                site("UdeA1", 0.0, 1.0),
                site("UdeA2", 0.8, 1.2),
            ],
            effects: vec![
                effect("power__beta3__C5"),
                effect("entropy__theta__C2"),
                effect("coherence__theta__C4-C6"),
                effect("sl__alpha1__C1-C3"),
                effect("crossfreq__beta3-beta3__C1"),
            ],
            age_effects: vec![
                AgeEffect {
                    feature: "power__delta__C1".into(),
                    slope: 0.05,
                },
                AgeEffect {
                    feature: "power__alpha2__C3".into(),
                    slope: -0.05,
                },
            ],
        }
    }
}

impl CohortSpec {
    pub fn feature_names(&self) -> Vec<String> {
        Extractor::default()
            .feature_names(self.n_components)
            .into_iter()
            .filter(|n| self.metrics.iter().any(|m| m == n.metric()))
            .map(|n| n.to_string())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(format!("cohort spec: {m}")));
        if self.n_components == 0 {
            return bad("n_components must be >= 1".into());
        }
        for m in &self.metrics {
            if !["power", "entropy", "coherence", "sl", "crossfreq"].contains(&m.as_str()) {
                return bad(format!("unknown metric `{m}`"));
            }
        }
        if !(self.noise_sd > 0.0) || !(self.site_jitter >= 0.0) {
            return bad("noise_sd must be > 0 and site_jitter >= 0".into());
        }
        let [lo, hi] = self.age_range;
        if !(lo > 0.0 && lo < hi && hi < 120.0) {
            return bad(format!("age range [{lo}, {hi}] invalid"));
        }
        if self.cells.is_empty() {
            return bad("no cells".into());
        }
        for c in &self.cells {
            if !(c.age_sd > 0.0) || !c.age_mean.is_finite() {
                return bad(format!("cell {}/{}: age SD must be > 0", c.site, c.group));
            }
            if c.female > c.n {
                return bad(format!(
                    "cell {}/{}: more females than records",
                    c.site, c.group
                ));
            }
            if !self.sites.iter().any(|s| s.site == c.site) {
                return bad(format!("cell site `{}` has no site effect entry", c.site));
            }
        }
        for s in &self.sites {
            if !(s.scale > 0.0) || !s.offset.is_finite() {
                return bad(format!("site {}: scale must be > 0", s.site));
            }
        }
        let names = self.feature_names();
        for e in &self.effects {
            if !e.d.is_finite() {
                return bad(format!("effect on {} is not finite", e.feature));
            }
            if !names.contains(&e.feature) {
                return bad(format!("effect feature `{}` is not generated", e.feature));
            }
        }
        for e in &self.age_effects {
            if !names.contains(&e.feature) {
                return bad(format!(
                    "age-effect feature `{}` is not generated",
                    e.feature
                ));
            }
        }
        if self.support_anchors {
            for g in Group::ALL {
                let n: usize = self
                    .cells
                    .iter()
                    .filter(|c| c.group == g)
                    .map(|c| c.n)
                    .sum();
                if n > 0 && n < 4 {
                    return bad(format!("support anchors need at least 4 {g} records"));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<CohortSpec> {
        let spec: CohortSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("cohort spec serializes")
    }

    /// Records in cell order, ids `<site>-<group>-<index>`.
    pub fn records(&self) -> Result<Vec<RecordMeta>> {
        self.validate()?;
        let mut rng = SplitMix64::new(derive_seed(self.seed, 1));
        let [lo, hi] = self.age_range;
        let mut out = Vec::new();
        for c in &self.cells {
            let mut sexes: Vec<Sex> = (0..c.n)
                .map(|i| if i < c.female { Sex::F } else { Sex::M })
                .collect();
            rng.shuffle(&mut sexes);
            for (i, sex) in sexes.into_iter().enumerate() {
                out.push(RecordMeta {
                    subject_id: format!("{}-{}-{:03}", c.site, c.group, i + 1),
                    site: c.site.clone(),
                    group: c.group,
                    age: (c.age_mean + c.age_sd * rng.normal()).clamp(lo, hi),
                    sex,
                });
            }
        }
        if self.support_anchors {
            let corners = [(lo, Sex::F), (lo, Sex::M), (hi, Sex::F), (hi, Sex::M)];
            for g in Group::ALL {
                let rows: Vec<usize> = (0..out.len())
                    .filter(|&i| out[i].group == g)
                    .take(4)
                    .collect();
                for (&r, &(age, sex)) in rows.iter().zip(&corners) {
                    out[r].age = age;
                    out[r].sex = sex;
                }
            }
        }
        Ok(out)
    }

    /// Per site (in `sites` order) and feature: `(offset, scale)`.
    pub fn site_parameters(&self, n_features: usize) -> Vec<Vec<(f64, f64)>> {
        let mut rng = SplitMix64::new(derive_seed(self.seed, 2));
        self.sites
            .iter()
            .map(|s| {
                (0..n_features)
                    .map(|_| {
                        let o = s.offset * (1.0 + self.site_jitter * rng.normal());
                        let k = s.scale * (self.site_jitter * rng.normal() * 0.5).exp();
                        (o * self.noise_sd, k)
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn generate_feature_cohort(spec: &CohortSpec) -> Result<FeatureTable> {
    let records = spec.records()?;
    let names = spec.feature_names();
    let site_params = spec.site_parameters(names.len());
    let d: Vec<f64> = names
        .iter()
        .map(|n| {
            spec.effects
                .iter()
                .filter(|e| &e.feature == n)
                .map(|e| e.d)
                .sum()
        })
        .collect();
    let slope: Vec<f64> = names
        .iter()
        .map(|n| {
            spec.age_effects
                .iter()
                .filter(|e| &e.feature == n)
                .map(|e| e.slope)
                .sum()
        })
        .collect();
    let mut columns = vec![Vec::with_capacity(records.len()); names.len()];
    let mut rng = SplitMix64::new(derive_seed(spec.seed, 3));
    for r in &records {
        let s = spec
            .sites
            .iter()
            .position(|x| x.site == r.site)
            .expect("validated");
        let acr = if r.group == Group::ACr { 1.0 } else { 0.0 };
        for (f, col) in columns.iter_mut().enumerate() {
            let z = rng.normal() + d[f] * acr + slope[f] * (r.age - spec.age_ref);
            let (o, k) = site_params[s][f];
            col.push(o + k * spec.noise_sd * z);
        }
    }
    FeatureTable::new(records, names, columns)
}

/// Ground-truth parameters as `parameter,site,feature,value` rows.
pub fn ground_truth_csv(spec: &CohortSpec) -> String {
    let names = spec.feature_names();
    let mut s = String::from("parameter,site,feature,value\n");
    for e in &spec.effects {
        let _ = writeln!(s, "group_d,,{},{}", e.feature, fmt_f64(e.d));
    }
    for e in &spec.age_effects {
        let _ = writeln!(s, "age_slope,,{},{}", e.feature, fmt_f64(e.slope));
    }
    for (site, params) in spec.sites.iter().zip(spec.site_parameters(names.len())) {
        for (name, (o, k)) in names.iter().zip(params) {
            let _ = writeln!(s, "site_offset,{},{name},{}", site.site, fmt_f64(o));
            let _ = writeln!(s, "site_scale,{},{name},{}", site.site, fmt_f64(k));
        }
    }
    s
}

/// Signal generators for epoch cohorts.
///
/// Text forms: `sine:<hz>`, `am-tone:<carrier hz>:<modulator hz>`,
/// `noise:<lo hz>:<hi hz>`, `coupled-pair:<rho>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Recipe {
    Sine {
        freq: f64,
    },
    AmTone {
        carrier: f64,
        modulator: f64,
    },
    FilteredNoise {
        lo: f64,
        hi: f64,
    },
    /// Components 1 and 2 share white noise with correlation `rho`.
    CoupledPair {
        rho: f64,
    },
}

impl FromStr for Recipe {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .and_then(|p| p.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::Parameter(format!(
                        "recipe `{s}`: argument {i} missing or not a number"
                    ))
                })
        };
        let arity = |n: usize| -> Result<()> {
            if parts.len() == n + 1 {
                Ok(())
            } else {
                Err(Error::Parameter(format!(
                    "recipe `{s}` takes {n} argument(s)"
                )))
            }
        };
        let r = match parts[0] {
            "sine" => {
                arity(1)?;
                Recipe::Sine { freq: num(1)? }
            }
            "am-tone" => {
                arity(2)?;
                Recipe::AmTone {
                    carrier: num(1)?,
                    modulator: num(2)?,
                }
            }
            "noise" => {
                arity(2)?;
                Recipe::FilteredNoise {
                    lo: num(1)?,
                    hi: num(2)?,
                }
            }
            "coupled-pair" => {
                arity(1)?;
                let rho = num(1)?;
                if !(-1.0..=1.0).contains(&rho) {
                    return Err(Error::Parameter(format!(
                        "recipe `{s}`: rho must be in [-1, 1]"
                    )));
                }
                Recipe::CoupledPair { rho }
            }
            other => return Err(Error::Parameter(format!("unknown recipe `{other}`"))),
        };
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpochLayout {
    pub fs: f64,
    pub n_epochs: usize,
    pub epoch_seconds: f64,
    /// Standard deviation of white noise added to every component.
    pub noise: f64,
}

impl Default for EpochLayout {
    fn default() -> Self {
        Self {
            fs: 250.0,
            n_epochs: 12,
            epoch_seconds: 5.0,
            noise: 0.05,
        }
    }
}

fn white(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// One [`EpochSet`] per record of `spec`, every component following `recipe`
/// with its own random phase or noise draw.
pub fn generate_epoch_cohort(
    spec: &CohortSpec,
    recipe: Recipe,
    layout: EpochLayout,
) -> Result<Vec<EpochSet>> {
    if !(layout.fs > 0.0)
        || layout.n_epochs == 0
        || !(layout.epoch_seconds > 0.0)
        || !(layout.noise >= 0.0)
    {
        return Err(Error::Parameter(
            "epoch layout: fs, n_epochs and epoch_seconds must be positive".into(),
        ));
    }
    let nyq = layout.fs / 2.0;
    let in_range = |f: f64| f > 0.0 && f < nyq;
    let ok = match recipe {
        Recipe::Sine { freq } => in_range(freq),
        Recipe::AmTone { carrier, modulator } => {
            in_range(carrier) && modulator > 0.0 && modulator < carrier
        }
        Recipe::FilteredNoise { lo, hi } => in_range(lo) && in_range(hi) && lo < hi,
        Recipe::CoupledPair { .. } => true,
    };
    if !ok {
        return Err(Error::Parameter(format!(
            "recipe {recipe:?} is out of range for fs {}",
            layout.fs
        )));
    }
    let n_samples = (layout.fs * layout.epoch_seconds).round() as usize;
    let len = n_samples * layout.n_epochs;
    let nc = spec.n_components;
    spec.records()?
        .into_iter()
        .enumerate()
        .map(|(i, meta)| {
            let mut rng = SplitMix64::new(derive_seed(spec.seed, 1000 + i as u64));
            let shared = white(&mut rng, len);
            let mut series = Vec::with_capacity(nc);
            for c in 0..nc {
                let phase = TAU * rng.next_f64();
                let t = |k: usize| k as f64 / layout.fs;
                let mut x: Vec<f64> = match recipe {
                    Recipe::Sine { freq } => (0..len)
                        .map(|k| (TAU * freq * t(k) + phase).sin())
                        .collect(),
                    Recipe::AmTone { carrier, modulator } => (0..len)
                        .map(|k| {
                            (1.0 + (TAU * modulator * t(k)).cos())
                                * (TAU * carrier * t(k) + phase).sin()
                        })
                        .collect(),
                    Recipe::FilteredNoise { lo, hi } => {
                        bandpass(&white(&mut rng, len), layout.fs, lo, hi)?
                    }
                    Recipe::CoupledPair { rho } => match c {
                        0 => shared.clone(),
                        1 => {
                            let own = white(&mut rng, len);
                            let w = (1.0 - rho * rho).max(0.0).sqrt();
                            shared
                                .iter()
                                .zip(&own)
                                .map(|(a, b)| rho * a + w * b)
                                .collect()
                        }
                        _ => white(&mut rng, len),
                    },
                };
                let coupled = matches!(recipe, Recipe::CoupledPair { .. }) && c < 2;
                if layout.noise > 0.0 && !coupled {
                    for v in &mut x {
                        *v += layout.noise * rng.normal();
                    }
                }
                series.push(x);
            }
            EpochSet::from_continuous(meta, layout.fs, n_samples, &series)
        })
        .collect()
}
