//! Welch power spectra, relative band power and spectral entropy.

use crate::datamodel::{Band, BandScheme, EpochSet};
use crate::dsp::{cell_integral, WelchParams, WelchPlan};
use crate::error::{Error, Result};

/// One-sided power spectral density per component.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    /// `power[component][bin]`.
    pub power: Vec<Vec<f64>>,
    /// Components whose every sample was constant within every segment.
    pub zero_variance: Vec<bool>,
    pub params: WelchParams,
    pub nperseg: usize,
    /// Segments averaged per component (all epochs pooled).
    pub n_segments: usize,
}

impl Psd {
    pub fn df(&self) -> f64 {
        self.freqs[1] - self.freqs[0]
    }
}

/// Welch estimate averaged over all segments of all epochs.
pub fn welch_psd(epochs: &EpochSet, params: WelchParams) -> Result<Psd> {
    let plan = WelchPlan::new(epochs.fs, params, epochs.n_samples())?;
    let mut power = Vec::with_capacity(epochs.n_components());
    let mut zero_variance = Vec::with_capacity(epochs.n_components());
    let mut n_segments = 0;
    for c in 0..epochs.n_components() {
        let spectra: Vec<_> = epochs
            .component_epochs(c)
            .into_iter()
            .flat_map(|x| plan.segment_spectra(x))
            .collect();
        let (p, count) = plan.auto_density(&spectra);
        zero_variance.push(p.iter().all(|&v| v == 0.0));
        power.push(p);
        n_segments = count;
    }
    Ok(Psd {
        freqs: plan.freqs(),
        power,
        zero_variance,
        params,
        nperseg: plan.nperseg,
        n_segments,
    })
}

/// Relative power of one spectrum: each band's cell integral over the
/// integral across the union of all bands.
pub fn relative_power_of(power: &[f64], df: f64, bands: &BandScheme) -> Result<Vec<f64>> {
    let nyq = (power.len() - 1) as f64 * df;
    if bands.highest() > nyq + 1e-9 {
        return Err(Error::Parameter(format!(
            "band edge {} Hz above the {nyq} Hz spectrum limit",
            bands.highest()
        )));
    }
    let parts: Vec<f64> = bands
        .bands()
        .iter()
        .map(|b| cell_integral(power, df, |_, f| b.contains(f)))
        .collect();
    let total = cell_integral(power, df, |_, f| bands.covers(f));
    if !(total > 0.0) {
        return Err(Error::UndefinedRatio(
            "zero power across the band range".into(),
        ));
    }
    Ok(parts.into_iter().map(|p| p / total).collect())
}

/// `result[component][band]`.
pub fn relative_power(psd: &Psd, bands: &BandScheme) -> Result<Vec<Vec<f64>>> {
    psd.power
        .iter()
        .enumerate()
        .map(|(c, p)| {
            relative_power_of(p, psd.df(), bands).map_err(|e| match e {
                Error::UndefinedRatio(_) if psd.zero_variance[c] => {
                    Error::UndefinedRatio(format!("component C{} has zero variance", c + 1))
                }
                other => other,
            })
        })
        .collect()
}

/// Normalized Shannon entropy of the bin powers with `f_lo ≤ f < f_hi`
/// (all bins when `band` is `None`), divided by `ln(n_bins)`.
pub fn spectral_entropy(power: &[f64], df: f64, band: Option<&Band>) -> Result<f64> {
    let sel: Vec<f64> = power
        .iter()
        .enumerate()
        .filter(|(k, _)| band.is_none_or(|b| b.contains(*k as f64 * df)))
        .map(|(_, &p)| p)
        .collect();
    if sel.len() < 2 {
        return Err(Error::Parameter(format!(
            "spectral entropy needs at least 2 bins, band has {}",
            sel.len()
        )));
    }
    let total: f64 = sel.iter().sum();
    if !(total > 0.0) {
        return Err(Error::UndefinedRatio("zero power in entropy range".into()));
    }
    let h: f64 = sel
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / total;
            -q * q.ln()
        })
        .sum();
    Ok((h / (sel.len() as f64).ln()).clamp(0.0, 1.0))
}
