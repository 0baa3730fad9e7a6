//! Full per-record feature vector in canonical column order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::connectivity::{
    am_pairs, amplitude_modulation, coherence_from, ComponentSpectra, SlNeighbors, SlParams,
};
use super::spectral::{relative_power, spectral_entropy, welch_psd};
use crate::datamodel::{BandScheme, EpochSet, FeatureName, FeatureTable};
use crate::dsp::{bandpass, WelchParams, WelchPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Extractor {
    pub bands: BandScheme,
    pub welch: WelchParams,
    pub sl: SlSettings,
}

/// Reference probability plus optional per-band parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlSettings {
    pub p_ref: f64,
    pub overrides: BTreeMap<String, SlParams>,
}

impl Default for SlSettings {
    fn default() -> Self {
        Self {
            p_ref: 0.05,
            overrides: BTreeMap::new(),
        }
    }
}

fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .collect()
}

impl Extractor {
    /// SL parameters used for `band` at sampling rate `fs`.
    pub fn sl_params(&self, band: usize, fs: f64) -> SlParams {
        let b = &self.bands.bands()[band];
        self.sl
            .overrides
            .get(&b.name)
            .copied()
            .unwrap_or_else(|| SlParams::for_band(b, fs, self.sl.p_ref))
    }

    /// Column names for records with `n_components` components.
    pub fn feature_names(&self, n_components: usize) -> Vec<FeatureName> {
        let bands = self.bands.bands();
        let mut out = Vec::new();
        for b in bands {
            for c in 1..=n_components {
                out.push(FeatureName::Power {
                    band: b.name.clone(),
                    comp: c,
                });
            }
        }
        for b in bands {
            for c in 1..=n_components {
                out.push(FeatureName::Entropy {
                    band: b.name.clone(),
                    comp: c,
                });
            }
        }
        for b in bands {
            for (x, y) in pairs(n_components) {
                out.push(FeatureName::Coherence {
                    band: b.name.clone(),
                    a: x + 1,
                    b: y + 1,
                });
            }
        }
        for b in bands {
            for (x, y) in pairs(n_components) {
                out.push(FeatureName::Sl {
                    band: b.name.clone(),
                    a: x + 1,
                    b: y + 1,
                });
            }
        }
        for (carrier, modulator) in am_pairs(&self.bands) {
            for c in 1..=n_components {
                out.push(FeatureName::CrossFreq {
                    modulator: bands[modulator].name.clone(),
                    carrier: bands[carrier].name.clone(),
                    comp: c,
                });
            }
        }
        out
    }

    /// Human-readable count breakdown.
    pub fn describe(&self, n_components: usize) -> String {
        let b = self.bands.len();
        let c = n_components;
        let p = c * (c.saturating_sub(1)) / 2;
        let am = am_pairs(&self.bands).len();
        let mut s = String::new();
        let _ = writeln!(
            s,
            "bands B = {b}, components C = {c}, pairs P = C(C-1)/2 = {p}"
        );
        let _ = writeln!(
            s,
            "carrier/modulator pairs A = {am} (modulator upper edge <= carrier upper edge)"
        );
        let _ = writeln!(s, "power      B*C = {}", b * c);
        let _ = writeln!(s, "entropy    B*C = {}", b * c);
        let _ = writeln!(s, "coherence  B*P = {}", b * p);
        let _ = writeln!(s, "sl         B*P = {}", b * p);
        let _ = writeln!(s, "crossfreq  A*C = {}", am * c);
        let _ = writeln!(
            s,
            "total      2*B*C + 2*B*P + A*C = {}",
            2 * b * c + 2 * b * p + am * c
        );
        s
    }

    /// Feature vector for one record, ordered as [`Extractor::feature_names`].
    pub fn extract(&self, set: &EpochSet) -> Result<Vec<f64>> {
        let nc = set.n_components();
        let fs = set.fs;
        let bands = self.bands.bands();
        let mut out = Vec::with_capacity(self.feature_names(nc).len());

        let psd = welch_psd(set, self.welch)?;
        let rel = relative_power(&psd, &self.bands)?;
        #[allow(clippy::needless_range_loop)]
        for bi in 0..bands.len() {
            out.extend((0..nc).map(|c| rel[c][bi]));
        }
        for b in bands {
            for c in 0..nc {
                out.push(spectral_entropy(&psd.power[c], psd.df(), Some(b))?);
            }
        }

        let plan = WelchPlan::new(fs, self.welch, set.n_samples())?;
        let spectra: Vec<ComponentSpectra> = (0..nc)
            .into_par_iter()
            .map(|c| ComponentSpectra::new(&plan, &set.component_epochs(c)))
            .collect();
        let pair_list = pairs(nc);
        let coh: Vec<Vec<f64>> = pair_list
            .par_iter()
            .map(|&(a, b)| coherence_from(&plan, &spectra[a], &spectra[b], &self.bands))
            .collect::<Result<_>>()?;
        for bi in 0..bands.len() {
            out.extend(coh.iter().map(|v| v[bi]));
        }

        let sl: Vec<Vec<f64>> = (0..bands.len())
            .into_par_iter()
            .map(|bi| self.sl_band(set, bi, &pair_list))
            .collect::<Result<_>>()?;
        for v in &sl {
            out.extend_from_slice(v);
        }

        let am: Vec<_> = (0..nc)
            .into_par_iter()
            .map(|c| amplitude_modulation(&set.component_epochs(c), fs, self.welch, &self.bands))
            .collect::<Result<_>>()?;
        for (carrier, modulator) in am_pairs(&self.bands) {
            for profile in &am {
                out.push(profile.get(carrier, modulator).unwrap_or(0.0));
            }
        }
        Ok(out)
    }

    fn sl_band(
        &self,
        set: &EpochSet,
        band: usize,
        pair_list: &[(usize, usize)],
    ) -> Result<Vec<f64>> {
        let b = &self.bands.bands()[band];
        let params = self.sl_params(band, set.fs);
        let neighbors: Vec<SlNeighbors> = (0..set.n_components())
            .into_par_iter()
            .map(|c| {
                let filtered: Vec<Vec<f64>> = set
                    .component_epochs(c)
                    .iter()
                    .map(|e| bandpass(e, set.fs, b.lo, b.hi))
                    .collect::<Result<_>>()?;
                let views: Vec<&[f64]> = filtered.iter().map(Vec::as_slice).collect();
                SlNeighbors::new(&views, params)
            })
            .collect::<Result<_>>()?;
        pair_list
            .iter()
            .map(|&(x, y)| neighbors[x].likelihood(&neighbors[y]))
            .collect()
    }

    /// Feature table over many records (all with the same component count).
    pub fn extract_table(&self, sets: &[EpochSet]) -> Result<FeatureTable> {
        let first = sets
            .first()
            .ok_or_else(|| Error::EmptyInput("no epoch sets to extract".into()))?;
        let nc = first.n_components();
        if let Some(bad) = sets.iter().find(|s| s.n_components() != nc) {
            return Err(Error::Schema(format!(
                "record {} has {} components, expected {nc}",
                bad.meta.subject_id,
                bad.n_components()
            )));
        }
        let rows: Vec<Vec<f64>> = sets
            .par_iter()
            .map(|s| {
                self.extract(s).map_err(|e| match e {
                    Error::UndefinedRatio(m) => {
                        Error::UndefinedRatio(format!("{}: {m}", s.meta.subject_id))
                    }
                    other => other,
                })
            })
            .collect::<Result<_>>()?;
        let names: Vec<String> = self
            .feature_names(nc)
            .iter()
            .map(|n| n.to_string())
            .collect();
        let columns = (0..names.len())
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        FeatureTable::new(
            sets.iter().map(|s| s.meta.clone()).collect(),
            names,
            columns,
        )
    }
}
