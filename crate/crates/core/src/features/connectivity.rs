//! Pairwise coherence, envelope-spectrum amplitude modulation and
//! synchronization likelihood.
//!
//! Series are passed as epoch slices (`&[&[f64]]`); segments and embedding
//! vectors never straddle an epoch boundary.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Band, BandScheme};
use crate::dsp::{bandpass, cell_integral, envelope, WelchParams, WelchPlan};
use crate::error::{Error, Result};

/// Segment spectra of one component, reusable across all of its pairs.
#[derive(Debug, Clone)]
pub struct ComponentSpectra {
    spectra: Vec<Vec<Complex64>>,
}

impl ComponentSpectra {
    pub fn new(plan: &WelchPlan, epochs: &[&[f64]]) -> Self {
        Self {
            spectra: epochs
                .iter()
                .flat_map(|x| plan.segment_spectra(x))
                .collect(),
        }
    }

    pub fn n_segments(&self) -> usize {
        self.spectra.len()
    }
}

fn shortest(epochs: &[&[f64]]) -> usize {
    epochs.iter().map(|e| e.len()).min().unwrap_or(0)
}

/// Magnitude-squared coherence per band, averaged over the band's bins.
pub fn coherence(
    x: &[&[f64]],
    y: &[&[f64]],
    fs: f64,
    params: WelchParams,
    bands: &BandScheme,
) -> Result<Vec<f64>> {
    if x.len() != y.len() || x.iter().zip(y).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Parameter("coherence inputs differ in length".into()));
    }
    let plan = WelchPlan::new(fs, params, shortest(x))?;
    let sx = ComponentSpectra::new(&plan, x);
    let sy = ComponentSpectra::new(&plan, y);
    coherence_from(&plan, &sx, &sy, bands)
}

pub fn coherence_from(
    plan: &WelchPlan,
    sx: &ComponentSpectra,
    sy: &ComponentSpectra,
    bands: &BandScheme,
) -> Result<Vec<f64>> {
    let n_seg = sx.n_segments();
    if n_seg < 4 {
        return Err(Error::Parameter(format!(
            "coherence needs at least 4 Welch segments, got {n_seg}"
        )));
    }
    let nb = plan.n_bins();
    let mut sxx = vec![0.0; nb];
    let mut syy = vec![0.0; nb];
    let mut sxy = vec![Complex64::new(0.0, 0.0); nb];
    for (a, b) in sx.spectra.iter().zip(&sy.spectra) {
        for k in 0..nb {
            sxx[k] += a[k].norm_sqr();
            syy[k] += b[k].norm_sqr();
            sxy[k] += a[k] * b[k].conj();
        }
    }
    if sxx.iter().all(|&v| v == 0.0) || syy.iter().all(|&v| v == 0.0) {
        return Err(Error::UndefinedRatio(
            "coherence of a zero-variance series".into(),
        ));
    }
    let df = plan.df();
    bands
        .bands()
        .iter()
        .map(|band| {
            let mut sum = 0.0;
            let mut used = 0usize;
            for k in 0..nb {
                if !band.contains(k as f64 * df) {
                    continue;
                }
                let den = sxx[k] * syy[k];
                if den > 0.0 {
                    sum += (sxy[k].norm_sqr() / den).min(1.0);
                    used += 1;
                }
            }
            if used == 0 {
                Err(Error::UndefinedRatio(format!(
                    "no power in band {} for coherence",
                    band.name
                )))
            } else {
                Ok(sum / used as f64)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmCell {
    pub carrier: usize,
    pub modulator: usize,
    pub value: f64,
}

/// Envelope power fractions for every (carrier, modulator) band pair with
/// `f_hi(modulator) ≤ f_hi(carrier)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmProfile {
    /// Carrier-major, modulator in band order.
    pub cells: Vec<AmCell>,
    /// Per carrier: envelope power below the lowest band, DC included.
    pub residual: Vec<f64>,
}

impl AmProfile {
    pub fn get(&self, carrier: usize, modulator: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.carrier == carrier && c.modulator == modulator)
            .map(|c| c.value)
    }
}

/// Band pairs `(carrier, modulator)` in output order.
pub fn am_pairs(bands: &BandScheme) -> Vec<(usize, usize)> {
    let b = bands.bands();
    (0..b.len())
        .flat_map(|c| {
            (0..b.len())
                .filter(move |&m| b[m].hi <= b[c].hi)
                .map(move |m| (c, m))
        })
        .collect()
}

/// For each carrier band: band-pass, take the analytic envelope, and split
/// its power between DC, the modulator bands and the remainder below the
/// carrier's upper edge.
pub fn amplitude_modulation(
    x: &[&[f64]],
    fs: f64,
    params: WelchParams,
    bands: &BandScheme,
) -> Result<AmProfile> {
    let total_len: usize = x.iter().map(|e| e.len()).sum();
    if (total_len as f64) < 8.0 * fs {
        return Err(Error::Parameter(format!(
            "amplitude modulation needs at least {} samples, got {total_len}",
            (8.0 * fs).ceil()
        )));
    }
    let plan = WelchPlan::new(fs, params, shortest(x))?;
    let df = plan.df();
    let mut cells = Vec::new();
    let mut residual = Vec::with_capacity(bands.len());
    for (ci, carrier) in bands.bands().iter().enumerate() {
        let mut spectra = Vec::new();
        let mut dc = 0.0;
        for epoch in x {
            let env = envelope(&bandpass(epoch, fs, carrier.lo, carrier.hi)?);
            let m = env.iter().sum::<f64>() / env.len() as f64;
            dc += m * m;
            spectra.extend(plan.segment_spectra(&env));
        }
        dc /= x.len() as f64;
        let (p, _) = plan.auto_density(&spectra);
        let total = dc + cell_integral(&p, df, |i, f| i >= 1 && f < carrier.hi);
        if !(total > 0.0) {
            return Err(Error::UndefinedRatio(format!(
                "zero envelope power for carrier {}",
                carrier.name
            )));
        }
        let mut used = 0.0;
        for (mi, modulator) in bands.bands().iter().enumerate() {
            if modulator.hi > carrier.hi {
                continue;
            }
            let share = cell_integral(&p, df, |i, f| i >= 1 && modulator.contains(f)) / total;
            used += share;
            cells.push(AmCell {
                carrier: ci,
                modulator: mi,
                value: share,
            });
        }
        residual.push((1.0 - used).max(0.0));
    }
    Ok(AmProfile { cells, residual })
}

/// Synchronization-likelihood parameters, all in samples except `p_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlParams {
    pub m: usize,
    pub lag: usize,
    pub w1: usize,
    pub w2: usize,
    pub p_ref: f64,
}

impl SlParams {
    /// Defaults tied to a band: lag a third of the fastest period, embedding
    /// window covering the slowest period, Theiler window one window length.
    pub fn for_band(band: &Band, fs: f64, p_ref: f64) -> Self {
        let lag = ((fs / (3.0 * band.hi)).round() as usize).max(1);
        let m = (3.0 * band.hi / band.lo).ceil() as usize + 1;
        let w1 = 2 * lag * (m - 1);
        let w2 = w1 + (10.0 / p_ref).ceil() as usize;
        Self {
            m,
            lag,
            w1,
            w2,
            p_ref,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2
            || self.lag < 1
            || self.w1 >= self.w2
            || !(self.p_ref > 0.0 && self.p_ref < 1.0)
        {
            return Err(Error::Parameter(format!(
                "invalid SL parameters m={} lag={} w1={} w2={} p_ref={}",
                self.m, self.lag, self.w1, self.w2, self.p_ref
            )));
        }
        Ok(())
    }

    /// Shortest epoch that yields a full candidate window.
    pub fn min_len(&self) -> usize {
        self.lag * (self.m - 1) + self.w2
    }
}

/// Nearest-neighbour sets of every reference vector of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct SlNeighbors {
    params: SlParams,
    shape: Vec<usize>,
    /// Per reference vector, neighbour indices sorted ascending.
    sets: Vec<Vec<u32>>,
}

impl SlNeighbors {
    pub fn new(epochs: &[&[f64]], params: SlParams) -> Result<Self> {
        params.validate()?;
        let need = params.min_len();
        if let Some(short) = epochs.iter().find(|e| e.len() < need) {
            return Err(Error::Parameter(format!(
                "synchronization likelihood needs epochs of at least {need} samples, got {}",
                short.len()
            )));
        }
        let mut sets = Vec::new();
        let mut shape = Vec::with_capacity(epochs.len());
        for x in epochs {
            let nv = x.len() - params.lag * (params.m - 1);
            shape.push(x.len());
            let dist = |i: usize, j: usize| -> f64 {
                (0..params.m)
                    .map(|d| {
                        let t = x[i + d * params.lag] - x[j + d * params.lag];
                        t * t
                    })
                    .sum()
            };
            let mut cand: Vec<(f64, u32)> = Vec::with_capacity(2 * params.w2);
            for i in 0..nv {
                cand.clear();
                let lo = i.saturating_sub(params.w2 - 1);
                let hi = (i + params.w2).min(nv);
                for j in (lo..hi).filter(|&j| j.abs_diff(i) > params.w1) {
                    cand.push((dist(i, j), j as u32));
                }
                let k = ((params.p_ref * cand.len() as f64).round() as usize).max(1);
                let order =
                    |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k < cand.len() {
                    cand.select_nth_unstable_by(k - 1, order);
                }
                let mut set: Vec<u32> = cand[..k.min(cand.len())].iter().map(|c| c.1).collect();
                set.sort_unstable();
                sets.push(set);
            }
        }
        Ok(Self {
            params,
            shape,
            sets,
        })
    }

    /// Mean over reference vectors of the fraction of shared neighbours.
    pub fn likelihood(&self, other: &SlNeighbors) -> Result<f64> {
        if self.params != other.params || self.shape != other.shape {
            return Err(Error::Parameter(
                "synchronization likelihood inputs differ in shape or parameters".into(),
            ));
        }
        let mut acc = 0.0;
        for (a, b) in self.sets.iter().zip(&other.sets) {
            acc += shared(a, b) as f64 / a.len() as f64;
        }
        Ok((acc / self.sets.len() as f64).clamp(0.0, 1.0))
    }
}

fn shared(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Synchronization likelihood of two (already band-limited) series.
pub fn synchronization_likelihood(x: &[&[f64]], y: &[&[f64]], params: SlParams) -> Result<f64> {
    SlNeighbors::new(x, params)?.likelihood(&SlNeighbors::new(y, params)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sl_params_per_band() {
        let p = SlParams::for_band(&Band::new("delta", 1.5, 6.0), 250.0, 0.05);
        assert_eq!((p.lag, p.m, p.w1, p.w2), (14, 13, 336, 536));
        let g = SlParams::for_band(&Band::new("gamma", 30.0, 45.0), 250.0, 0.05);
        assert_eq!((g.lag, g.m, g.w1, g.w2), (2, 6, 20, 220));
        assert!(p.validate().is_ok());
    }

    #[test]
    fn sl_rejects_short_epochs() {
        let p = SlParams {
            m: 3,
            lag: 2,
            w1: 5,
            w2: 40,
            p_ref: 0.05,
        };
        let x = vec![0.5; 43];
        match synchronization_likelihood(&[&x], &[&x], p) {
            Err(Error::Parameter(msg)) => assert!(msg.contains("44")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn am_pair_count() {
        assert_eq!(am_pairs(&BandScheme::default()).len(), 36);
    }

    #[test]
    fn shared_counts_intersection() {
        assert_eq!(shared(&[1, 3, 5, 7], &[2, 3, 7, 9]), 2);
        assert_eq!(shared(&[], &[1]), 0);
    }
}
